"""Endogenous and exogenous dyad statistics.

Statistics are held in a small incremental state (pairwise count matrix,
degree counters, last-contact stamps, two-path matrix) that is advanced one
simultaneous batch at a time.  A snapshot for interval m therefore only
sees events from intervals before m (plus burn-in).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .events import CovariateTable, EventHistory, Riskset

ENDOGENOUS = (
    "inertia",
    "reciprocity",
    "rrank_send",
    "rrank_receive",
    "pshift_abby",
    "pshift_abay",
    "itp",
    "otp",
)
EXOGENOUS = (
    "actor_covariate",
    "dyad_covariate",
    "covariate_difference",
    "covariate_abs_difference",
    "covariate_log_ratio",
)
KINDS = ("intercept",) + ENDOGENOUS + EXOGENOUS


class StatisticError(ValueError):
    pass


@dataclass(frozen=True)
class StatisticSpec:
    """One column of the design.

    ``normalize`` divides inertia by the sender's out-degree and reciprocity
    by the receiver's in-degree (x/0 -> 0).  ``standardize="interval"``
    z-scores the column over the riskset within each interval.  ``scale``
    multiplies the raw value.  ``aggregate`` selects the two-path sum:
    ``"min"`` (sum of min(N(i,h), N(h,j))) or ``"product"``.
    """

    name: str
    covariate: str | None = None
    direction: str | None = None
    normalize: bool = False
    standardize: str = "none"
    scale: float = 1.0
    aggregate: str = "min"
    label: str | None = None

    def __post_init__(self):
        if self.name not in KINDS:
            raise StatisticError(f"unknown statistic {self.name!r}")
        if self.name in EXOGENOUS and not self.covariate:
            raise StatisticError(f"{self.name} needs a covariate name")
        if self.name == "actor_covariate" and self.direction not in ("send", "receive"):
            raise StatisticError("actor_covariate needs direction 'send' or 'receive'")
        if self.standardize not in ("none", "interval"):
            raise StatisticError(f"unknown standardization {self.standardize!r}")
        if self.name == "intercept" and self.standardize != "none":
            raise StatisticError("the intercept cannot be standardized")
        if self.aggregate not in ("min", "product"):
            raise StatisticError(f"unknown two-path aggregate {self.aggregate!r}")

    @property
    def column(self) -> str:
        if self.label:
            return self.label
        if self.name == "actor_covariate":
            return f"{self.covariate}_{self.direction}"
        if self.name == "dyad_covariate":
            return str(self.covariate)
        if self.name in EXOGENOUS:
            return f"{self.name.removeprefix('covariate_')}_{self.covariate}"
        return self.name

    @property
    def endogenous(self) -> bool:
        return self.name in ENDOGENOUS

    @classmethod
    def parse(cls, obj: "str | Mapping | StatisticSpec") -> "StatisticSpec":
        if isinstance(obj, StatisticSpec):
            return obj
        if isinstance(obj, str):
            return cls(obj)
        return cls(**dict(obj))

    def to_dict(self) -> dict:
        out = {"name": self.name}
        defaults = StatisticSpec("intercept")
        for key in ("covariate", "direction", "normalize", "standardize", "scale", "aggregate", "label"):
            v = getattr(self, key)
            if v != getattr(defaults, key):
                out[key] = v
        return out


def resolve_specs(specs: Iterable, intercept: bool = True) -> list[StatisticSpec]:
    """Parse specs, enforce unique columns and a single leading intercept."""
    out = [StatisticSpec.parse(s) for s in specs]
    n_int = sum(s.name == "intercept" for s in out)
    if n_int > 1:
        raise StatisticError("intercept listed more than once")
    if intercept and n_int == 0:
        out.insert(0, StatisticSpec("intercept"))
    cols = [s.column for s in out]
    dup = {c for c in cols if cols.count(c) > 1}
    if dup:
        raise StatisticError(f"duplicate statistic names: {sorted(dup)}")
    if not out:
        raise StatisticError("no statistics specified")
    return out


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    den = np.asarray(den, dtype=float)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def _recency_rank(stamp: np.ndarray) -> np.ndarray:
    """``1/rank`` of column j within each row by descending stamp; 0 if unstamped.

    Ties share the minimum rank of the tied block.
    """
    ahead = (stamp[:, None, :] > stamp[:, :, None]).sum(axis=2)
    return np.where(stamp >= 0, 1.0 / (1.0 + ahead), 0.0)


class StatState:
    """Incremental endogenous state for ``n_actors`` actors."""

    def __init__(self, n_actors: int, specs: Sequence[StatisticSpec]):
        self.n = n_actors
        self.specs = list(specs)
        self.counts = np.zeros((n_actors, n_actors), dtype=np.int64)
        self.out_degree = np.zeros(n_actors, dtype=np.int64)
        self.in_degree = np.zeros(n_actors, dtype=np.int64)
        self.stamp = np.full((n_actors, n_actors), -1, dtype=np.int64)
        self.previous = np.zeros((n_actors, n_actors), dtype=bool)
        self.n_batches = 0
        self._two_path = {
            agg: np.zeros((n_actors, n_actors), dtype=np.int64)
            for agg in {s.aggregate for s in self.specs if s.name in ("itp", "otp")}
        }

    def update(self, senders: np.ndarray, receivers: np.ndarray) -> None:
        """Apply one simultaneous batch of events."""
        N = self.counts
        for a, b in zip(np.asarray(senders).tolist(), np.asarray(receivers).tolist()):
            old = N[a, b]
            for agg, P in self._two_path.items():
                # N[a,b] enters otp(a, j) through h=b and otp(i, b) through h=a
                if agg == "min":
                    row = (N[b, :] > old).astype(np.int64)
                    col = (N[:, a] > old).astype(np.int64)
                else:
                    row = N[b, :].copy()
                    col = N[:, a].copy()
                row[[a, b]] = 0
                col[[a, b]] = 0
                P[a, :] += row
                P[:, b] += col
            N[a, b] = old + 1
            self.out_degree[a] += 1
            self.in_degree[b] += 1
        prev = np.zeros_like(self.previous)
        prev[senders, receivers] = True
        self.previous = prev
        self.stamp[senders, receivers] = self.n_batches
        self.n_batches += 1

    def endogenous(self, spec: StatisticSpec, s: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Raw (unscaled, unstandardized) endogenous column over dyads ``(s, r)``."""
        name = spec.name
        if name == "intercept":
            return np.ones(s.size)
        if name == "inertia":
            v = self.counts[s, r].astype(float)
            return _safe_div(v, self.out_degree[s]) if spec.normalize else v
        if name == "reciprocity":
            v = self.counts[r, s].astype(float)
            return _safe_div(v, self.in_degree[r]) if spec.normalize else v
        if name == "rrank_send":
            return _recency_rank(self.stamp)[s, r]
        if name == "rrank_receive":
            return _recency_rank(self.stamp.T)[s, r]
        if name == "pshift_abby":
            P = self.previous
            return ((P.sum(axis=0)[s] - P[r, s]) > 0).astype(float)
        if name == "pshift_abay":
            P = self.previous
            return ((P.sum(axis=1)[s] - P[s, r]) > 0).astype(float)
        if name == "otp":
            return self._two_path[spec.aggregate][s, r].astype(float)
        if name == "itp":
            return self._two_path[spec.aggregate][r, s].astype(float)
        raise StatisticError(f"{name} is not an endogenous statistic")


def exogenous_block(
    spec: StatisticSpec,
    times: np.ndarray,
    riskset: Riskset,
    n_actors: int,
    covariates: CovariateTable,
) -> np.ndarray:
    """Raw exogenous column ``[len(times), n_dyads]`` evaluated at ``times``."""
    name = spec.name
    s, r = riskset.senders, riskset.receivers
    cov = spec.covariate
    if name == "dyad_covariate":
        if cov not in covariates.dyad:
            raise StatisticError(f"unknown dyad covariate {cov!r}")
        return covariates.dyad_matrix(cov, times, riskset)
    if cov not in covariates.actor:
        raise StatisticError(f"unknown actor covariate {cov!r}")
    v = covariates.actor_matrix(cov, times, n_actors)
    if name == "actor_covariate":
        return v[:, s] if spec.direction == "send" else v[:, r]
    if name == "covariate_difference":
        return v[:, s] - v[:, r]
    if name == "covariate_abs_difference":
        return np.abs(v[:, s] - v[:, r])
    if name == "covariate_log_ratio":
        vs, vr = v[:, s], v[:, r]
        bad = (vs <= 0) | (vr <= 0)
        if np.any(bad):
            m, d = (int(x[0]) for x in np.nonzero(bad))
            raise StatisticError(
                f"log ratio of {cov!r} undefined for dyad ({int(s[d])}, {int(r[d])}) "
                f"at time {float(np.atleast_1d(times)[m])!r}: nonpositive value"
            )
        return np.log(vs / vr)
    raise StatisticError(f"{name} is not an exogenous statistic")


def standardize_rows(values: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """z-score each row (one interval) across dyads; near-constant rows -> 0."""
    mean = values.mean(axis=-1, keepdims=True)
    centered = values - mean
    sd = np.sqrt((centered**2).mean(axis=-1, keepdims=True))
    return np.where(sd < tol, 0.0, centered / np.where(sd < tol, 1.0, sd))


def finish_columns(block: np.ndarray, specs: Sequence[StatisticSpec]) -> np.ndarray:
    """Apply scaling and per-interval standardization to ``[..., D, P]`` in place."""
    for p, spec in enumerate(specs):
        if spec.scale != 1.0:
            block[..., p] *= spec.scale
        if spec.standardize == "interval":
            block[..., p] = standardize_rows(block[..., p])
    return block


@dataclass(frozen=True)
class StatSnapshots:
    """Statistic values ``[interval, dyad, statistic]``."""

    values: np.ndarray
    specs: tuple[StatisticSpec, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.column for s in self.specs)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, m: int) -> np.ndarray:
        return self.values[m]

    def column(self, name: str) -> np.ndarray:
        return self.values[..., self.names.index(name)]

    def to_long_csv(self, path: str | Path) -> None:
        M, D, P = self.values.shape
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["dyad_id", "interval", "stat_name", "value"])
            for d in range(D):
                for m in range(M):
                    for p, name in enumerate(self.names):
                        w.writerow([d, m + 1, name, repr(float(self.values[m, d, p]))])


def check_specs(specs: Sequence[StatisticSpec], covariates: CovariateTable | None) -> None:
    names = covariates.names if covariates is not None else set()
    for spec in specs:
        if spec.name in EXOGENOUS:
            pool = (covariates.dyad if spec.name == "dyad_covariate" else covariates.actor) if covariates else {}
            if spec.covariate not in pool:
                raise StatisticError(
                    f"statistic {spec.column!r} references unknown covariate {spec.covariate!r}"
                    + (f" (known: {sorted(names)})" if names else "")
                )


def compute_stats(
    history: EventHistory,
    specs: Iterable,
    covariates: CovariateTable | None = None,
) -> StatSnapshots:
    """One statistics matrix per interval of ``history``.

    Exogenous covariates are read at the interval's closing time ``t_m``.
    """
    specs = [StatisticSpec.parse(s) for s in specs]
    if not specs:
        raise StatisticError("no statistics specified")
    if sum(s.name == "intercept" for s in specs) > 1:
        raise StatisticError("intercept listed more than once")
    check_specs(specs, covariates)
    rs = history.riskset
    s, r = rs.senders, rs.receivers
    M, D, P = history.n_intervals, len(rs), len(specs)
    out = np.zeros((M, D, P))

    ends = history.grid.boundaries[1:]
    for p, spec in enumerate(specs):
        if spec.name in EXOGENOUS:
            out[:, :, p] = exogenous_block(spec, ends, rs, history.n_actors, covariates)
    endo = [(p, spec) for p, spec in enumerate(specs) if spec.name not in EXOGENOUS]

    state = StatState(history.n_actors, specs)
    batches = list(history.batches())
    k = 0
    while k < len(batches) and batches[k][0] < 0:
        state.update(batches[k][1], batches[k][2])
        k += 1
    for m in range(M):
        for p, spec in endo:
            out[m, :, p] = state.endogenous(spec, s, r)
        if k < len(batches) and batches[k][0] == m:
            state.update(batches[k][1], batches[k][2])
            k += 1
    finish_columns(out, specs)
    return StatSnapshots(out, tuple(specs))
