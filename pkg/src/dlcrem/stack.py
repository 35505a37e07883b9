"""Dyad x interval Poisson regression stack."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .events import EventHistory, counts
from .stats import StatSnapshots


@dataclass(frozen=True)
class StatStack:
    """Rows are ordered interval-major: row ``m * n_dyads + d``.

    ``group`` maps each row to its latent-class unit: the dyad itself in
    directed mode, the unordered pair in symmetric mode.
    """

    X: np.ndarray
    y: np.ndarray
    offset: np.ndarray
    dyad: np.ndarray
    interval: np.ndarray
    group: np.ndarray
    names: tuple[str, ...]
    n_dyads: int
    n_intervals: int
    n_groups: int
    group_of_dyad: np.ndarray
    log_y_factorial: np.ndarray
    mode: str = "directed"

    @property
    def n_rows(self) -> int:
        return self.y.size

    def eta(self, beta: np.ndarray) -> np.ndarray:
        return self.X @ beta + self.offset

    def row_loglik(self, beta: np.ndarray) -> np.ndarray:
        """Poisson log-probability of every row under ``beta``."""
        eta = self.eta(beta)
        return self.y * eta - np.exp(eta) - self.log_y_factorial

    def loglik(self, beta: np.ndarray) -> float:
        return float(self.row_loglik(beta).sum())

    def unit_loglik(self, betas: np.ndarray) -> np.ndarray:
        """Per-unit summed log-probability, ``[n_groups, K]`` for ``betas [K, P]``."""
        betas = np.atleast_2d(betas)
        out = np.empty((self.n_groups, betas.shape[0]))
        for k, b in enumerate(betas):
            out[:, k] = np.bincount(self.group, weights=self.row_loglik(b), minlength=self.n_groups)
        return out

    def unit_events(self) -> np.ndarray:
        return np.bincount(self.group, weights=self.y, minlength=self.n_groups)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["dyad_id", "interval_id", "group_id", "y", "offset", *self.names])
            for k in range(self.n_rows):
                w.writerow(
                    [int(self.dyad[k]), int(self.interval[k]) + 1, int(self.group[k]), int(self.y[k]),
                     repr(float(self.offset[k])), *(repr(float(v)) for v in self.X[k])]
                )


def symmetric_groups(senders: np.ndarray, receivers: np.ndarray) -> np.ndarray:
    """Unit id per dyad so that (i, j) and (j, i) share one id."""
    keys = {}
    out = np.empty(senders.size, dtype=np.int64)
    for d, (i, j) in enumerate(zip(senders.tolist(), receivers.tolist())):
        out[d] = keys.setdefault((min(i, j), max(i, j)), len(keys))
    return out


def build_stack(history: EventHistory, snapshots: StatSnapshots, mode: str = "directed") -> StatStack:
    """Response ``dN``, design from the snapshots and ``log`` interval-width offset."""
    if mode not in ("directed", "symmetric"):
        raise ValueError(f"unknown class mode {mode!r}")
    M, D = history.n_intervals, len(history.riskset)
    if snapshots.values.shape[:2] != (M, D):
        raise ValueError(
            f"snapshots shape {snapshots.values.shape[:2]} does not match grid ({M} intervals, {D} dyads)"
        )
    widths = history.grid.widths
    if np.any(widths <= 0):
        raise ValueError("zero-width interval in grid")
    y = counts(history).T.reshape(-1).astype(float)
    X = snapshots.values.reshape(M * D, -1)
    offset = np.repeat(np.log(widths), D)
    dyad = np.tile(np.arange(D), M)
    interval = np.repeat(np.arange(M), D)
    if mode == "directed":
        gmap = np.arange(D)
    else:
        gmap = symmetric_groups(history.riskset.senders, history.riskset.receivers)
    for a in (X, y, offset, dyad, interval):
        a.setflags(write=False)
    return StatStack(
        X=X,
        y=y,
        offset=offset,
        dyad=dyad,
        interval=interval,
        group=gmap[dyad],
        names=snapshots.names,
        n_dyads=D,
        n_intervals=M,
        n_groups=int(gmap.max()) + 1,
        group_of_dyad=gmap,
        log_y_factorial=gammaln(y + 1.0),
        mode=mode,
    )


AGGREGATORS = {"median": np.median, "max": np.max, "mean": np.mean}


def concomitant_features(
    snapshots: StatSnapshots,
    group_of_dyad: np.ndarray,
    aggregates: Sequence[str],
) -> np.ndarray:
    """Time-constant per-unit features ``[units, Q]`` from statistic columns.

    Column q of ``snapshots`` is reduced over intervals (and over both
    dyads of a symmetric unit) with ``aggregates[q]`` (median, max or mean).
    """
    values = snapshots.values
    if len(aggregates) != values.shape[2]:
        raise ValueError("one aggregate per concomitant column is required")
    U = int(group_of_dyad.max()) + 1
    out = np.empty((U, values.shape[2]))
    members = [np.flatnonzero(group_of_dyad == u) for u in range(U)]
    for q, how in enumerate(aggregates):
        if how not in AGGREGATORS:
            raise ValueError(f"unknown aggregate {how!r} (choose from {sorted(AGGREGATORS)})")
        col = values[:, :, q]
        for u, dy in enumerate(members):
            out[u, q] = AGGREGATORS[how](col[:, dy])
    return out
