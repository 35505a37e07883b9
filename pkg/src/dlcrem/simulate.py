"""Event sequences from a DLC-REM with known dyad classes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .events import CovariateTable, EventHistory, build_riskset, make_history
from .stats import EXOGENOUS, StatisticSpec, StatState, exogenous_block, finish_columns, resolve_specs

MIN_TOTAL_RATE = 1e-300


class GenSpecError(ValueError):
    pass


@dataclass
class GenSpec:
    """Generating design.

    ``class_map`` gives a 0-based class for each dyad of the full directed
    riskset in lexicographic order.  ``beta`` maps every statistic column
    (intercept included) to its per-class coefficients; no coefficient has
    a default.
    """

    n_actors: int
    class_map: np.ndarray
    beta: Mapping[str, Sequence[float]]
    statistics: Sequence = ("inertia", "reciprocity")
    n_events: int = 2000
    seed: int = 1
    burn_in_events: int = 0
    covariates: CovariateTable | None = None
    specs: list[StatisticSpec] = field(init=False, repr=False)

    def __post_init__(self):
        self.class_map = np.asarray(self.class_map, dtype=np.int64)
        n = self.n_actors
        if n < 2:
            raise GenSpecError("n_actors must be at least 2")
        if self.class_map.shape != (n * (n - 1),):
            raise GenSpecError(f"class_map must cover all {n * (n - 1)} directed dyads")
        if self.class_map.min() < 0:
            raise GenSpecError("class ids must be nonnegative")
        if self.n_events < 1:
            raise GenSpecError("n_events must be positive")
        if not 0 <= self.burn_in_events < self.n_events:
            raise GenSpecError("burn_in_events must be in [0, n_events)")
        self.specs = resolve_specs(self.statistics)
        cols = [s.column for s in self.specs]
        missing = [c for c in cols if c not in self.beta]
        if missing:
            raise GenSpecError(f"beta is missing coefficient(s) for {missing}")
        unknown = [k for k in self.beta if k not in cols]
        if unknown:
            raise GenSpecError(f"beta names unknown statistic(s) {unknown}")
        K = int(self.class_map.max()) + 1
        for c in cols:
            if len(self.beta[c]) != K:
                raise GenSpecError(f"beta[{c!r}] has {len(self.beta[c])} values, expected {K} classes")
        if any(s.name in EXOGENOUS for s in self.specs) and self.covariates is None:
            raise GenSpecError("exogenous statistics need a covariate table")

    @property
    def K(self) -> int:
        return int(self.class_map.max()) + 1

    def beta_matrix(self) -> np.ndarray:
        """Coefficients ``[K, P]`` in statistic order."""
        return np.array([[self.beta[s.column][k] for s in self.specs] for k in range(self.K)], dtype=float)


def generate(spec: GenSpec) -> tuple[EventHistory, np.ndarray]:
    """Simulate ``spec.n_events`` events; returns the history and the true class map.

    Statistics are advanced after every event.  The waiting time is
    exponential with the total rate and the dyad is drawn proportional to
    its rate.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_actors
    rs = build_riskset(n, "full")
    s, r = rs.senders, rs.receivers
    D = len(rs)
    specs = spec.specs
    B = spec.beta_matrix()[spec.class_map]
    state = StatState(n, specs)
    X = np.empty((D, len(specs)))
    senders = np.empty(spec.n_events, dtype=np.int64)
    receivers = np.empty(spec.n_events, dtype=np.int64)
    times = np.empty(spec.n_events)
    t = 0.0
    for e in range(spec.n_events):
        for p, st in enumerate(specs):
            if st.name in EXOGENOUS:
                X[:, p] = exogenous_block(st, np.array([t]), rs, n, spec.covariates)[0]
            else:
                X[:, p] = state.endogenous(st, s, r)
        finish_columns(X, specs)
        log_rate = np.einsum("dp,dp->d", B, X)
        top = log_rate.max()
        w = np.exp(log_rate - top)
        total_w = w.sum()
        if not np.isfinite(top) or top + np.log(total_w) < np.log(MIN_TOTAL_RATE):
            raise FloatingPointError(
                f"total event rate underflows at event {e} (max log-rate {top:.3g}); check beta"
            )
        t += rng.exponential(1.0) / (total_w * np.exp(top))
        d = int(np.searchsorted(np.cumsum(w), rng.random() * total_w, side="right"))
        d = min(d, D - 1)
        senders[e], receivers[e], times[e] = s[d], r[d], t
        state.update(s[d : d + 1], r[d : d + 1])
    burn = None
    if spec.burn_in_events:
        burn = float(times[spec.burn_in_events - 1])
    history = make_history(senders, receivers, times, actors=n, burn_in_end=burn)
    return history, spec.class_map.copy()


def _cuts(cut, n: int) -> np.ndarray:
    c = np.atleast_1d(np.asarray(cut, dtype=np.int64))
    if np.any(c <= 0) or np.any(c >= n) or np.any(np.diff(c) <= 0):
        raise GenSpecError(f"cuts {c.tolist()} must be strictly increasing inside (0, {n})")
    return c


def block_pattern(n_actors: int, row_cut, col_cut, class_ids) -> np.ndarray:
    """Class map from a rectangular partition of the adjacency matrix.

    Sender rows are split at ``row_cut`` and receiver columns at
    ``col_cut`` (scalars or increasing sequences); ``class_ids[a][b]`` is
    the class of region (row band a, column band b).  With different row and
    column cuts the layout cannot be written as a stochastic block model on
    the same number of actor blocks.
    """
    rows, cols = _cuts(row_cut, n_actors), _cuts(col_cut, n_actors)
    ids = np.asarray(class_ids, dtype=np.int64)
    if ids.shape != (rows.size + 1, cols.size + 1):
        raise GenSpecError(f"class_ids must have shape {(rows.size + 1, cols.size + 1)}")
    rs = build_riskset(n_actors, "full")
    return ids[np.searchsorted(rows, rs.senders, side="right"), np.searchsorted(cols, rs.receivers, side="right")]


def sb_pattern(membership: Sequence[int], n_blocks: int | None = None) -> np.ndarray:
    """Class ``C * block(i) + block(j)`` for every dyad of the full riskset."""
    m = np.asarray(membership, dtype=np.int64)
    C = int(m.max()) + 1 if n_blocks is None else n_blocks
    rs = build_riskset(m.size, "full")
    return C * m[rs.senders] + m[rs.receivers]


# Four-region layout of the proof-of-concept design on 10 actors: senders
# split 4/6, receivers split 6/4.
DESIGN_ROW_CUT = 4
DESIGN_COL_CUT = 6
DESIGN_CLASS_IDS = ((0, 2), (1, 3))
DESIGN_BETA = {
    "intercept": (-11.0, -2.0, -5.0, -3.0),
    "inertia": (-0.2, 0.1, 0.6, 0.3),
    "reciprocity": (-0.3, 0.05, 0.1, 0.2),
}


def design_spec(seed: int = 1, n_events: int = 2000, statistics=None, beta=None, **kw) -> GenSpec:
    """The 10-actor, four-class simulation design."""
    cmap = block_pattern(10, DESIGN_ROW_CUT, DESIGN_COL_CUT, DESIGN_CLASS_IDS)
    return GenSpec(
        n_actors=10,
        class_map=cmap,
        beta=dict(DESIGN_BETA if beta is None else beta),
        statistics=statistics if statistics is not None else ("inertia", "reciprocity"),
        n_events=n_events,
        seed=seed,
        **kw,
    )
