"""Stochastic-block relational event model baseline.

Actors fall into ``C`` blocks and every ordered block pair ``(c1, c2)`` has
its own coefficient vector.  Estimation is hard-assignment coordinate
ascent: per-pair Poisson fits given the memberships, then a sequential
reassignment of each actor (in actor-id order) to its best block.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .em import DlcModel, DlcSpec
from .events import Riskset
from .glm import DEFAULT_RIDGE, SolverError, fit_weighted_poisson
from .stack import StatStack

FALLBACK_RIDGE = 1.0


@dataclass
class SbModel:
    C: int
    membership: np.ndarray
    theta: np.ndarray  # [C, C, P]
    loglik: float
    stat_names: tuple[str, ...]
    empty_pairs: list[tuple[int, int]] = field(default_factory=list)
    sweeps: int = 0
    start_logliks: list[float] = field(default_factory=list)

    @property
    def n_param_vectors(self) -> int:
        return self.C * self.C

    @property
    def n_params(self) -> int:
        return self.C * self.C * self.theta.shape[2]

    def to_dict(self) -> dict:
        return {
            "model_type": "sbrem",
            "version": __version__,
            "C": self.C,
            "membership": [{"actor": a, "block": int(b) + 1} for a, b in enumerate(self.membership)],
            "theta": self.theta.tolist(),
            "loglik": self.loglik,
            "stat_names": list(self.stat_names),
            "empty_pairs": [[a + 1, b + 1] for a, b in self.empty_pairs],
            "sweeps": self.sweeps,
            "start_logliks": self.start_logliks,
            "n_param_vectors": self.n_param_vectors,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SbModel":
        if doc.get("model_type") != "sbrem":
            raise ValueError("not an SB-REM model document")
        rows = sorted(doc["membership"], key=lambda r: r["actor"])
        return cls(
            C=int(doc["C"]),
            membership=np.array([r["block"] - 1 for r in rows], dtype=np.int64),
            theta=np.array(doc["theta"], dtype=float),
            loglik=float(doc["loglik"]),
            stat_names=tuple(doc["stat_names"]),
            empty_pairs=[(a - 1, b - 1) for a, b in doc.get("empty_pairs", [])],
            sweeps=int(doc.get("sweeps", 0)),
            start_logliks=[float(x) for x in doc.get("start_logliks", [])],
        )


def pair_of_dyad(membership: np.ndarray, riskset: Riskset) -> np.ndarray:
    """Flat pair index ``C * block(sender) + block(receiver)`` per dyad."""
    C = int(membership.max()) + 1
    return C * membership[riskset.senders] + membership[riskset.receivers]


def _fit_pairs(stack, pairs, C, theta, ridge, warm):
    P = stack.X.shape[1]
    row_pair = pairs[stack.dyad]
    empty = []
    for p in range(C * C):
        rows = row_pair == p
        if not np.any(rows):
            theta[p] = 0.0
            empty.append(divmod(p, C))
            continue
        args = (stack.X[rows], stack.y[rows], stack.offset[rows])
        try:
            theta[p] = fit_weighted_poisson(*args, ridge=ridge, start=theta[p] if warm else None,
                                            covariance=False).beta
        except SolverError:
            theta[p] = fit_weighted_poisson(*args, ridge=FALLBACK_RIDGE, start=np.zeros(P),
                                            covariance=False).beta
            empty.append(divmod(p, C))
    return empty


def _dyad_loglik(stack: StatStack, theta: np.ndarray) -> np.ndarray:
    """``[D, C*C]`` summed log-probability of each dyad under each pair's coefficients."""
    return np.column_stack([
        np.bincount(stack.dyad, weights=stack.row_loglik(t), minlength=stack.n_dyads) for t in theta
    ])


def _one_start(stack, riskset, n_actors, C, membership, max_sweeps, ridge):
    s, r = riskset.senders, riskset.receivers
    out_d = [np.flatnonzero(s == a) for a in range(n_actors)]
    in_d = [np.flatnonzero(r == a) for a in range(n_actors)]
    theta = np.zeros((C * C, stack.X.shape[1]))
    m = membership.copy()
    warm = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        empty = _fit_pairs(stack, C * m[s] + m[r], C, theta, ridge, warm)
        warm = True
        L = _dyad_loglik(stack, theta)
        moved = False
        for a in range(n_actors):
            score = np.array([
                L[out_d[a], C * b + m[r[out_d[a]]]].sum() + L[in_d[a], C * m[s[in_d[a]]] + b].sum()
                for b in range(C)
            ])
            best = int(np.argmax(score))
            if score[best] > score[m[a]] + 1e-9 * (1.0 + abs(score[m[a]])):
                m[a] = best
                moved = True
        if not moved:
            break
    else:
        empty = _fit_pairs(stack, C * m[s] + m[r], C, theta, ridge, warm)
    L = _dyad_loglik(stack, theta)
    pairs = C * m[s] + m[r]
    ll = float(L[np.arange(L.shape[0]), pairs].sum())
    return m, theta, ll, empty, sweeps


def fit_sbrem(
    stack: StatStack,
    riskset: Riskset,
    C: int,
    *,
    n_actors: int | None = None,
    n_starts: int = 20,
    max_sweeps: int = 50,
    seed: int = 1,
    ridge: float = DEFAULT_RIDGE,
    membership: np.ndarray | None = None,
) -> SbModel:
    """Multi-start coordinate ascent; the best final log-likelihood is kept.

    ``membership`` replaces the random initial memberships with one given
    start.
    """
    if C < 1:
        raise ValueError("C must be at least 1")
    if stack.mode != "directed":
        raise ValueError("SB-REM needs a directed (per-dyad) stack")
    if n_actors is None:
        n_actors = int(max(riskset.senders.max(), riskset.receivers.max())) + 1
    if membership is not None:
        inits = [np.asarray(membership, dtype=np.int64)]
    elif C == 1:
        inits = [np.zeros(n_actors, dtype=np.int64)]
    else:
        inits = [np.random.default_rng([seed, k]).integers(0, C, n_actors) for k in range(n_starts)]
    best = None
    logliks = []
    for init in inits:
        m, theta, ll, empty, sweeps = _one_start(stack, riskset, n_actors, C, init, max_sweeps, ridge)
        logliks.append(ll)
        if best is None or ll > best[2]:
            best = (m, theta, ll, empty, sweeps)
    m, theta, ll, empty, sweeps = best
    return SbModel(C, m, theta.reshape(C, C, -1), ll, stack.names, empty, sweeps, logliks)


def sb_to_dlc(model: SbModel, riskset: Riskset, stack: StatStack | None = None) -> tuple[DlcSpec, np.ndarray, DlcModel]:
    """Equivalent DLC-REM with ``K = C^2`` classes and one-hot class priors.

    The class of dyad ``(i, j)`` is ``C * block(i) + block(j)`` and its
    coefficients are ``theta[block(i), block(j)]``, so every dyad keeps its
    rate function.
    """
    C = model.C
    K = C * C
    cmap = C * model.membership[riskset.senders] + model.membership[riskset.receivers]
    onehot = np.zeros((cmap.size, K))
    onehot[np.arange(cmap.size), cmap] = 1.0
    beta = model.theta.reshape(K, -1)
    spec = DlcSpec(K=K, n_starts=1)
    dlc = DlcModel(
        spec=spec,
        stat_names=model.stat_names,
        feature_names=(),
        beta=beta,
        beta_se=np.full(beta.shape, np.nan),
        gamma=np.zeros((K - 1, 1)),
        gamma_se=np.full((K - 1, 1), np.nan),
        posteriors=onehot,
        priors=onehot.copy(),
        loglik=model.loglik,
        trace=[model.loglik],
        group_of_dyad=np.arange(cmap.size),
        model_type="sbrem",
    )
    if stack is not None:
        dlc.loglik = dlc.observed_loglik(stack)
    return spec, cmap, dlc


def sb_start(model: SbModel, riskset: Riskset) -> tuple[np.ndarray, np.ndarray]:
    """Concomitant features and an EM start that embed ``model`` in a DLC-REM.

    The features are block-pair indicators (reference pair dropped) and the
    start posteriors are the exact one-hot block pairs, so the first M-step
    reproduces the block coefficients.  Fit with ``ridge=0`` to let the
    priors approach one-hot.
    """
    K = model.C * model.C
    cmap = model.C * model.membership[riskset.senders] + model.membership[riskset.receivers]
    onehot = np.eye(K)[cmap]
    return onehot[:, : K - 1], onehot


def save_sbrem(model: SbModel, path: str | Path, extra: dict | None = None) -> None:
    doc = model.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
