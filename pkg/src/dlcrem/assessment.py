"""Model comparison: information criteria, percentile-threshold recall, K sweeps."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import adjusted_rand_score

from .em import DlcModel, DlcSpec, FitDiagnostics, fit
from .events import EventHistory
from .stack import StatStack

DEFAULT_THRESHOLDS = (0.95, 0.99)


def top_cutoff(threshold: float, n_dyads: int) -> int:
    """Largest rank that counts as a hit: ``ceil((1 - threshold) * n_dyads)``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold!r}")
    return int(math.ceil(round((1.0 - threshold) * n_dyads, 9)))


def hit_credit(rates: np.ndarray, dyads: np.ndarray, cutoff: int) -> np.ndarray:
    """Credit of each realized dyad for one interval's rate vector.

    A dyad strictly ahead of ``g`` others and tied with ``e - 1`` others
    occupies ranks ``g+1 .. g+e``; its credit is the share of those ranks
    within ``cutoff``, i.e. the hit probability under a uniformly random
    ordering of ties.
    """
    order = np.sort(rates)
    ahead = rates.size - np.searchsorted(order, rates[dyads], side="right")
    tied = np.searchsorted(order, rates[dyads], side="right") - np.searchsorted(order, rates[dyads], side="left")
    return np.clip(cutoff - ahead, 0, tied) / tied


def average_rank_hit(rates: np.ndarray, dyads: np.ndarray, cutoff: int) -> np.ndarray:
    """Hit indicator using the average rank of each tie block."""
    order = np.sort(rates)
    ahead = rates.size - np.searchsorted(order, rates[dyads], side="right")
    tied = np.searchsorted(order, rates[dyads], side="right") - np.searchsorted(order, rates[dyads], side="left")
    return (ahead + (tied + 1) / 2.0 <= cutoff).astype(float)


def recall_from_rates(
    rates: np.ndarray,
    y: np.ndarray,
    threshold: float = 0.95,
    ties: str = "expected",
) -> float:
    """Recall for rate and count matrices ``[interval, dyad]``.

    Every event (with multiplicity) on dyad d in interval m is scored against
    the ranking of ``rates[m]``.
    """
    rates = np.asarray(rates, dtype=float)
    y = np.asarray(y)
    M, D = rates.shape
    cutoff = top_cutoff(threshold, D)
    score = hit_credit if ties == "expected" else average_rank_hit
    hits = 0.0
    total = 0.0
    for m in np.flatnonzero(y.sum(axis=1) > 0):
        dyads = np.flatnonzero(y[m])
        hits += float(score(rates[m], dyads, cutoff) @ y[m, dyads])
        total += float(y[m, dyads].sum())
    if total == 0:
        raise ValueError("no events to score")
    return hits / total


def mixture_rates(
    beta: np.ndarray,
    unit_probs: np.ndarray,
    stack: StatStack,
) -> np.ndarray:
    """``sum_k p_dk exp(beta_k . x_dm)`` as ``[interval, dyad]`` (no offset)."""
    beta = np.atleast_2d(beta)
    probs = unit_probs[stack.group]
    eta = stack.X @ beta.T
    top = eta.max(axis=1, keepdims=True)
    lam = np.exp(top[:, 0]) * np.sum(probs * np.exp(eta - top), axis=1)
    return lam.reshape(stack.n_intervals, stack.n_dyads)


def recall(
    model: DlcModel,
    stack: StatStack,
    threshold: float = 0.95,
    *,
    weights: str = "posterior",
    ties: str = "expected",
) -> float:
    """Share of modeled events whose dyad ranks in the top ``1 - threshold`` of predicted rates."""
    probs = model.posteriors if weights == "posterior" else model.priors
    rates = mixture_rates(model.beta, probs, stack)
    y = stack.y.reshape(stack.n_intervals, stack.n_dyads)
    return recall_from_rates(rates, y, threshold, ties)


def information_criteria(loglik: float, n_params: int, n_obs: int) -> tuple[float, float]:
    """``(aic, bic)``."""
    return -2.0 * loglik + 2.0 * n_params, -2.0 * loglik + n_params * math.log(n_obs)


@dataclass
class AssessmentReport:
    K: int
    loglik: float
    n_params: int
    aic: float
    bic: float
    recall: dict[float, float]
    class_sizes: list[dict] = field(default_factory=list)
    bic_n: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recall"] = {str(k): v for k, v in self.recall.items()}
        return d


def class_sizes(model: DlcModel, stack: StatStack) -> list[dict]:
    """Per class: hard-assigned unit count and dyad share, posterior event share."""
    hard = model.hard_classes
    dyad_hard = hard[stack.group_of_dyad]
    events = stack.unit_events()
    share = model.posteriors.T @ events / max(events.sum(), 1.0)
    return [
        {
            "class": k + 1,
            "units": int(np.sum(hard == k)),
            "dyads": int(np.sum(dyad_hard == k)),
            "dyad_share": float(np.mean(dyad_hard == k)),
            "event_share": float(share[k]),
        }
        for k in range(model.K)
    ]


def assess(
    model: DlcModel,
    stack: StatStack,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    *,
    bic_n: str = "units",
    weights: str = "posterior",
) -> AssessmentReport:
    n = model.n_units if bic_n == "units" else int(stack.y.sum())
    aic, bic = information_criteria(model.loglik, model.n_params, n)
    return AssessmentReport(
        K=model.K,
        loglik=model.loglik,
        n_params=model.n_params,
        aic=aic,
        bic=bic,
        recall={t: recall(model, stack, t, weights=weights) for t in thresholds},
        class_sizes=class_sizes(model, stack),
        bic_n=n,
    )


@dataclass
class SweepResult:
    rows: list[AssessmentReport]
    models: dict[int, DlcModel]
    diagnostics: dict[int, FitDiagnostics]
    winners: dict[str, int]

    def table(self) -> str:
        return format_sweep(self.rows, self.winners)


def sweep_k(
    stack: StatStack,
    concomitant: np.ndarray | None,
    base_spec: DlcSpec,
    k_values: Sequence[int],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    *,
    feature_names: Sequence[str] | None = None,
    bic_n: str = "units",
    n_jobs: int = 1,
) -> SweepResult:
    """Fit every K with shared settings; failures are recorded per row."""
    if not k_values:
        raise ValueError("k_values is empty")
    rows, models, diags = [], {}, {}
    for K in k_values:
        try:
            model, diag = fit(stack, concomitant, replace(base_spec, K=int(K)),
                              feature_names=feature_names, n_jobs=n_jobs)
        except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
            rows.append(AssessmentReport(int(K), float("nan"), 0, float("nan"), float("nan"),
                                         {t: float("nan") for t in thresholds}, error=f"{type(exc).__name__}: {exc}"))
            continue
        models[K], diags[K] = model, diag
        rows.append(assess(model, stack, thresholds, bic_n=bic_n))
    ok = [r for r in rows if r.error is None]
    winners = {}
    if ok:
        winners["aic"] = min(ok, key=lambda r: r.aic).K
        winners["bic"] = min(ok, key=lambda r: r.bic).K
        for t in thresholds:
            winners[f"recall@{t:g}"] = max(ok, key=lambda r: r.recall[t]).K
    return SweepResult(rows, models, diags, winners)


def format_sweep(rows: Sequence[AssessmentReport], winners: dict[str, int]) -> str:
    thresholds = list(rows[0].recall) if rows else []
    head = ["K", "loglik", "n_params", "AIC", "BIC"] + [f"recall@{t:g}" for t in thresholds]
    lines = []
    for r in rows:
        if r.error:
            lines.append([str(r.K), "failed: " + r.error] + [""] * (len(head) - 2))
            continue
        cells = [str(r.K), f"{r.loglik:.3f}", str(r.n_params), f"{r.aic:.2f}", f"{r.bic:.2f}"]
        cells += [f"{r.recall[t]:.3f}" for t in thresholds]
        marks = [("aic", 3), ("bic", 4)] + [(f"recall@{t:g}", 5 + i) for i, t in enumerate(thresholds)]
        for key, col in marks:
            if winners.get(key) == r.K:
                cells[col] += "*"
        lines.append(cells)
    widths = [max(len(head[c]), *(len(l[c]) for l in lines)) if lines else len(head[c]) for c in range(len(head))]
    out = ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
    out += ["  ".join(c.rjust(w) for c, w in zip(l, widths)) for l in lines]
    return "\n".join(out)


def write_classification(model: DlcModel, history: EventHistory, path: str | Path) -> None:
    """``dyad, sender, receiver, hard_class, p_1..p_K`` (classes 1-based)."""
    post = model.dyad_posteriors
    hard = np.argmax(post, axis=1)
    rs = history.riskset
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dyad", "sender", "receiver", "hard_class", *(f"p_{k + 1}" for k in range(model.K))])
        for d in range(len(rs)):
            w.writerow([d, history.actors[rs.senders[d]], history.actors[rs.receivers[d]], int(hard[d]) + 1,
                        *(repr(float(p)) for p in post[d])])


def match_classes(true: np.ndarray, estimated: np.ndarray) -> dict:
    """Confusion matrix, best label matching, agreement and adjusted Rand index."""
    true = np.asarray(true, dtype=np.int64)
    est = np.asarray(estimated, dtype=np.int64)
    kt, ke = int(true.max()) + 1, int(est.max()) + 1
    conf = np.zeros((kt, ke), dtype=np.int64)
    np.add.at(conf, (true, est), 1)
    rows, cols = linear_sum_assignment(-conf)
    matched = int(conf[rows, cols].sum())
    return {
        "confusion": conf.tolist(),
        "mapping": {int(c) + 1: int(r) + 1 for r, c in zip(rows, cols)},
        "agreement": matched / true.size,
        "misclassified": int(true.size - matched),
        "adjusted_rand": float(adjusted_rand_score(true, est)),
    }


def save_report(report: AssessmentReport | Sequence[AssessmentReport], path: str | Path, extra: dict | None = None) -> None:
    if isinstance(report, AssessmentReport):
        doc = report.to_dict()
    else:
        doc = {"rows": [r.to_dict() for r in report]}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
