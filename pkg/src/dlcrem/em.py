"""EM estimation of the dyadic latent class relational event model.

Each latent-class unit (a dyad, or an unordered pair in symmetric mode)
carries one class for the whole history.  The E-step works on per-unit
summed Poisson log-probabilities, entirely in log space; the M-step fits one
weighted Poisson GLM per class and a weighted multinomial logit for the
concomitant model.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from . import __version__
from .glm import (
    DEFAULT_RIDGE,
    MultinomialFit,
    SolverError,
    WeightedPoissonFit,
    fit_weighted_multinomial,
    fit_weighted_poisson,
    log_class_probs,
    poisson_covariance,
)
from .stack import StatStack
from .stats import StatisticSpec

EMPTY_CLASS_FRACTION = 1e-6
TIE_LOGLIK = 1e-4
DIVERGENT_PARAMS = 1e-2


class DegenerateFitError(RuntimeError):
    """Every start ended with an empty class or a solver failure."""


@dataclass(frozen=True)
class DlcSpec:
    K: int
    rate_statistics: tuple[StatisticSpec, ...] = ()
    concomitant_features: tuple[str, ...] = ()
    class_mode: str = "directed"
    max_iter: int = 500
    tol: float = 1e-6
    n_starts: int = 10
    seed: int = 1
    ridge: float = DEFAULT_RIDGE

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")
        if self.class_mode not in ("directed", "symmetric"):
            raise ValueError(f"unknown class mode {self.class_mode!r}")

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "rate_statistics": [s.to_dict() for s in self.rate_statistics],
            "concomitant_features": list(self.concomitant_features),
            "class_mode": self.class_mode,
            "max_iter": self.max_iter,
            "tol": self.tol,
            "n_starts": self.n_starts,
            "seed": self.seed,
            "ridge": self.ridge,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DlcSpec":
        doc = dict(doc)
        doc["rate_statistics"] = tuple(StatisticSpec.parse(s) for s in doc.get("rate_statistics", ()))
        doc["concomitant_features"] = tuple(doc.get("concomitant_features", ()))
        return cls(**doc)


@dataclass
class DlcModel:
    spec: DlcSpec
    stat_names: tuple[str, ...]
    feature_names: tuple[str, ...]
    beta: np.ndarray
    beta_se: np.ndarray
    gamma: np.ndarray
    gamma_se: np.ndarray
    posteriors: np.ndarray
    priors: np.ndarray
    loglik: float
    trace: list[float]
    group_of_dyad: np.ndarray
    converged: bool = True
    iterations: int = 0
    model_type: str = "dlcrem"

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def n_params(self) -> int:
        T = self.beta.shape[1]
        if self.model_type == "sbrem":
            # block memberships are discrete, not counted
            return self.K * T
        Q = len(self.feature_names)
        return self.K * T + (self.K - 1) * (Q + 1)

    @property
    def n_units(self) -> int:
        return self.posteriors.shape[0]

    @property
    def hard_classes(self) -> np.ndarray:
        return np.argmax(self.posteriors, axis=1)

    @property
    def dyad_posteriors(self) -> np.ndarray:
        return self.posteriors[self.group_of_dyad]

    def observed_loglik(self, stack: StatStack, concomitant: np.ndarray | None = None) -> float:
        if self.model_type == "sbrem":
            # converted block models carry fixed one-hot priors
            return observed_loglik(self.beta, self.gamma, stack, priors=self.priors)
        return observed_loglik(self.beta, self.gamma, stack, concomitant)

    def to_dict(self) -> dict:
        return {
            "model_type": self.model_type,
            "version": __version__,
            "spec": self.spec.to_dict(),
            "stat_names": list(self.stat_names),
            "feature_names": list(self.feature_names),
            "beta": self.beta.tolist(),
            "beta_se": self.beta_se.tolist(),
            "gamma": self.gamma.tolist(),
            "gamma_se": self.gamma_se.tolist(),
            "posteriors": self.posteriors.tolist(),
            "hard_classes": self.hard_classes.tolist(),
            "priors": self.priors.tolist(),
            "loglik": self.loglik,
            "trace": list(self.trace),
            "group_of_dyad": self.group_of_dyad.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
            "n_params": self.n_params,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DlcModel":
        K = len(doc["beta"])
        q1 = len(doc["feature_names"]) + 1
        return cls(
            spec=DlcSpec.from_dict(doc["spec"]),
            stat_names=tuple(doc["stat_names"]),
            feature_names=tuple(doc["feature_names"]),
            beta=np.array(doc["beta"], dtype=float),
            beta_se=np.array(doc["beta_se"], dtype=float),
            gamma=np.array(doc["gamma"], dtype=float).reshape(K - 1, q1),
            gamma_se=np.array(doc["gamma_se"], dtype=float).reshape(K - 1, q1),
            posteriors=np.array(doc["posteriors"], dtype=float),
            priors=np.array(doc["priors"], dtype=float),
            loglik=float(doc["loglik"]),
            trace=[float(x) for x in doc["trace"]],
            group_of_dyad=np.array(doc["group_of_dyad"], dtype=np.int64),
            converged=bool(doc.get("converged", True)),
            iterations=int(doc.get("iterations", 0)),
            model_type=doc.get("model_type", "dlcrem"),
        )


@dataclass
class FitDiagnostics:
    start_logliks: list[float]
    start_converged: list[bool]
    start_iterations: list[int]
    best_start: int
    non_identifiable: bool
    degenerate_starts: list[int] = field(default_factory=list)
    restarted_starts: list[int] = field(default_factory=list)
    errors: dict[int, str] = field(default_factory=dict)
    traces: list[list[float]] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "start_logliks": self.start_logliks,
            "start_converged": self.start_converged,
            "start_iterations": self.start_iterations,
            "best_start": self.best_start,
            "non_identifiable": self.non_identifiable,
            "degenerate_starts": self.degenerate_starts,
            "restarted_starts": self.restarted_starts,
            "errors": {str(k): v for k, v in self.errors.items()},
        }


def concomitant_design(features: np.ndarray | None, n_units: int) -> np.ndarray:
    """Prepend the intercept column to per-unit concomitant features."""
    if features is None:
        return np.ones((n_units, 1))
    F = np.asarray(features, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != n_units:
        raise ValueError(f"concomitant features have {F.shape[0]} rows, expected {n_units} units")
    return np.hstack([np.ones((n_units, 1)), F])


def _log_priors(gamma: np.ndarray, W: np.ndarray, K: int) -> np.ndarray:
    if K == 1:
        return np.zeros((W.shape[0], 1))
    return log_class_probs(gamma, W)


def _posterior(unit_ll: np.ndarray, log_prior: np.ndarray) -> tuple[np.ndarray, float]:
    joint = unit_ll + log_prior
    norm = logsumexp(joint, axis=1, keepdims=True)
    post = np.exp(joint - norm)
    post /= post.sum(axis=1, keepdims=True)
    return post, float(norm.sum())


def e_step(
    beta: np.ndarray,
    gamma: np.ndarray,
    stack: StatStack,
    concomitant: np.ndarray | None = None,
    *,
    priors: np.ndarray | None = None,
) -> np.ndarray:
    """Posterior class probabilities ``[units, K]``.

    ``concomitant`` holds the per-unit features without the intercept
    column; pass ``priors`` instead to fix the prior class probabilities.
    """
    beta = np.atleast_2d(beta)
    log_prior = _prior_matrix(beta.shape[0], gamma, stack.n_groups, concomitant, priors)
    return _posterior(stack.unit_loglik(beta), log_prior)[0]


def _prior_matrix(K, gamma, n_units, concomitant, priors):
    if priors is not None:
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(priors, dtype=float))
    return _log_priors(np.asarray(gamma, dtype=float).reshape(K - 1, -1), concomitant_design(concomitant, n_units), K)


def observed_loglik(
    beta: np.ndarray,
    gamma: np.ndarray,
    stack: StatStack,
    concomitant: np.ndarray | None = None,
    *,
    priors: np.ndarray | None = None,
) -> float:
    """Observed-data log-likelihood ``sum_u log sum_k prior_uk prod_m Poisson(...)``."""
    beta = np.atleast_2d(beta)
    log_prior = _prior_matrix(beta.shape[0], gamma, stack.n_groups, concomitant, priors)
    return float(logsumexp(stack.unit_loglik(beta) + log_prior, axis=1).sum())


def classification_loglik(beta: np.ndarray, stack: StatStack, classes: np.ndarray) -> float:
    """Complete-data log-likelihood with every unit fixed to ``classes[u]``."""
    L = stack.unit_loglik(np.atleast_2d(beta))
    return float(L[np.arange(L.shape[0]), classes].sum())


def m_step(
    posteriors: np.ndarray,
    stack: StatStack,
    concomitant: np.ndarray | None = None,
    *,
    beta_start: np.ndarray | None = None,
    gamma_start: np.ndarray | None = None,
    ridge: float = DEFAULT_RIDGE,
    feature_names: Sequence[str] = (),
    covariance: bool = True,
) -> tuple[list[WeightedPoissonFit], MultinomialFit]:
    """Per-class weighted Poisson fits and the concomitant multinomial fit.

    ``covariance=False`` skips the standard errors of the rate coefficients.
    """
    K = posteriors.shape[1]
    fits = []
    for k in range(K):
        w = posteriors[stack.group, k]
        try:
            fits.append(
                fit_weighted_poisson(
                    stack.X, stack.y, stack.offset, w,
                    ridge=ridge,
                    start=None if beta_start is None else beta_start[k],
                    names=stack.names,
                    covariance=covariance,
                )
            )
        except (SolverError, ValueError) as exc:
            raise SolverError(f"class {k + 1}: {exc}") from exc
    W = concomitant_design(concomitant, stack.n_groups)
    try:
        gfit = fit_weighted_multinomial(
            W, posteriors, ridge=ridge, start=gamma_start,
            names=("intercept", *feature_names),
        )
    except SolverError as exc:
        raise SolverError(f"concomitant model: {exc}") from exc
    return fits, gfit


def _summary_features(stack: StatStack) -> np.ndarray:
    U = stack.n_groups
    events = stack.unit_events()
    cols = [np.log1p(events), np.bincount(stack.group, weights=np.exp(stack.offset), minlength=U)]
    for p in range(stack.X.shape[1]):
        x = stack.X[:, p]
        num = np.bincount(stack.group, weights=stack.y * x, minlength=U)
        plain = np.bincount(stack.group, weights=x, minlength=U) / np.bincount(stack.group, minlength=U)
        cols.append(np.where(events > 0, num / np.where(events > 0, events, 1), plain))
    F = np.column_stack(cols)
    sd = F.std(axis=0)
    F = F[:, sd > 1e-12]
    return (F - F.mean(axis=0)) / F.std(axis=0) if F.size else np.zeros((U, 1))


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *stream])


def initialize(stack: StatStack, K: int, start_index: int, seed: int, attempt: int = 0) -> np.ndarray:
    """Initial posteriors for one start.

    Start 0 clusters per-unit summaries (log event count, exposure and
    event-weighted statistic means) by k-means and smooths the partition to
    0.9 / 0.1; later starts draw flat-Dirichlet rows.
    """
    U = stack.n_groups
    if K == 1:
        return np.ones((U, 1))
    rng = _rng(seed, start_index, attempt)
    if start_index == 0 and attempt == 0:
        F = _summary_features(stack)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, labels = kmeans2(F, K, minit="++", seed=rng)
        post = np.full((U, K), 0.1 / (K - 1))
        post[np.arange(U), labels] = 0.9
        return post
    return rng.dirichlet(np.ones(K), size=U)


@dataclass
class _StartResult:
    beta: np.ndarray
    beta_se: np.ndarray
    gamma: MultinomialFit
    posteriors: np.ndarray
    priors: np.ndarray
    trace: list[float]
    converged: bool
    iterations: int
    degenerate: bool = False
    error: str | None = None


def _run_em(stack, W, K, init_post, spec: DlcSpec, feature_names) -> _StartResult:
    concomitant = W[:, 1:] if W.shape[1] > 1 else None
    U = stack.n_groups
    fits, gfit = m_step(init_post, stack, concomitant, ridge=spec.ridge, feature_names=feature_names,
                        covariance=False)
    trace: list[float] = []
    converged = False
    post = m_post = init_post
    for it in range(spec.max_iter + 1):
        beta = np.vstack([f.beta for f in fits])
        log_prior = _log_priors(gfit.gamma, W, K)
        post, ll = _posterior(stack.unit_loglik(beta), log_prior)
        trace.append(ll)
        if np.min(post.sum(axis=0)) < EMPTY_CLASS_FRACTION * U:
            return _StartResult(beta, np.full(beta.shape, np.nan), gfit, post, np.exp(log_prior),
                                trace, False, it, degenerate=True, error="empty class")
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) / (abs(trace[-1]) + 1.0) < spec.tol:
            converged = True
            break
        if it == spec.max_iter:
            break
        m_post = post
        fits, gfit = m_step(
            post, stack, concomitant,
            beta_start=beta, gamma_start=gfit.gamma, ridge=spec.ridge, feature_names=feature_names,
            covariance=False,
        )
    # standard errors at the final estimate, weighted by the posteriors that produced it
    beta_se = np.vstack([
        np.sqrt(np.clip(np.diag(poisson_covariance(stack.X, beta[k], stack.offset, m_post[stack.group, k], spec.ridge)), 0, None))
        for k in range(K)
    ])
    return _StartResult(
        beta=beta,
        beta_se=beta_se,
        gamma=gfit,
        posteriors=post,
        priors=np.exp(log_prior),
        trace=trace,
        converged=converged,
        iterations=len(trace) - 1,
    )


def canonical_order(posteriors: np.ndarray) -> np.ndarray:
    """Class order by ascending posterior mass, so the largest class is last.

    The last class is the concomitant reference class.
    """
    return np.argsort(posteriors.sum(axis=0), kind="stable")


def rereference_gamma(gamma: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Express concomitant coefficients for classes permuted by ``order``."""
    full = np.vstack([gamma, np.zeros((1, gamma.shape[1]))])[order]
    return (full - full[-1])[:-1]


def _canonical(res: _StartResult, stack, W, spec, feature_names) -> _StartResult:
    order = canonical_order(res.posteriors)
    post = res.posteriors[:, order]
    gamma = rereference_gamma(res.gamma.gamma, order)
    if post.shape[1] > 1:
        # recomputes the concomitant covariance under the new reference class
        gfit = fit_weighted_multinomial(W, post, ridge=spec.ridge, start=gamma, max_iter=0,
                                        names=("intercept", *feature_names))
        gfit.gamma = gamma
    else:
        gfit = res.gamma
    return _StartResult(
        beta=res.beta[order],
        beta_se=res.beta_se[order],
        gamma=gfit,
        posteriors=post,
        priors=res.priors[:, order],
        trace=res.trace,
        converged=res.converged,
        iterations=res.iterations,
        degenerate=res.degenerate,
        error=res.error,
    )


def _params(res: _StartResult) -> np.ndarray:
    return np.r_[res.beta.ravel(), res.gamma.gamma.ravel()]


def fit(
    stack: StatStack,
    concomitant: np.ndarray | None,
    spec: DlcSpec,
    *,
    feature_names: Sequence[str] | None = None,
    extra_starts: Sequence[np.ndarray] = (),
    n_jobs: int = 1,
) -> tuple[DlcModel, FitDiagnostics]:
    """Fit the mixture by multi-start EM and keep the best start.

    ``extra_starts`` are additional initial posterior matrices tried after
    the ``spec.n_starts`` built-in starts.
    """
    K = spec.K
    U = stack.n_groups
    W = concomitant_design(concomitant, U)
    if feature_names is None:
        feature_names = spec.concomitant_features or tuple(f"w{q}" for q in range(1, W.shape[1]))
    feature_names = tuple(feature_names)
    if len(feature_names) != W.shape[1] - 1:
        raise ValueError("feature_names does not match the concomitant feature count")

    def run(index: int):
        restarted = False
        inits = [extra_starts[index - spec.n_starts]] if index >= spec.n_starts else []
        for attempt in range(2):
            init = inits[0] if inits and attempt == 0 else initialize(stack, K, index, spec.seed, attempt)
            try:
                res = _run_em(stack, W, K, init, spec, feature_names)
            except (SolverError, ValueError) as exc:
                res = None
                err = str(exc)
            else:
                err = res.error
            if res is not None and not res.degenerate:
                return _canonical(res, stack, W, spec, feature_names), restarted, None
            restarted = True
        return (None if res is None else _canonical(res, stack, W, spec, feature_names)), restarted, err

    indices = range(spec.n_starts + len(extra_starts))
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(run, indices))
    else:
        outcomes = [run(i) for i in indices]

    results = [o[0] for o in outcomes]
    logliks = [r.trace[-1] if r is not None else float("-inf") for r in results]
    degenerate = [i for i, o in enumerate(outcomes) if o[2] is not None]
    restarted = [i for i, o in enumerate(outcomes) if o[1]]
    errors = {i: o[2] for i, o in enumerate(outcomes) if o[2] is not None}
    ok = [i for i in indices if i not in degenerate]
    if not ok:
        raise DegenerateFitError(f"all {len(results)} starts failed: {errors}")
    best = max(ok, key=lambda i: logliks[i])

    flag = False
    for a in ok:
        for b in ok:
            if a < b and abs(logliks[a] - logliks[b]) <= TIE_LOGLIK:
                pa, pb = _params(results[a]), _params(results[b])
                if np.max(np.abs(pa - pb)) > DIVERGENT_PARAMS:
                    flag = True

    r = results[best]
    model = DlcModel(
        spec=spec,
        stat_names=stack.names,
        feature_names=feature_names,
        beta=r.beta,
        beta_se=r.beta_se,
        gamma=r.gamma.gamma,
        gamma_se=r.gamma.se,
        posteriors=r.posteriors,
        priors=r.priors,
        loglik=r.trace[-1],
        trace=r.trace,
        group_of_dyad=stack.group_of_dyad,
        converged=r.converged,
        iterations=r.iterations,
    )
    diag = FitDiagnostics(
        start_logliks=logliks,
        start_converged=[bool(r is not None and r.converged) for r in results],
        start_iterations=[r.iterations if r is not None else 0 for r in results],
        best_start=best,
        non_identifiable=flag,
        degenerate_starts=degenerate,
        restarted_starts=restarted,
        errors=errors,
        traces=[r.trace if r is not None else [] for r in results],
    )
    return model, diag


def fit_classification(
    stack: StatStack,
    classes: np.ndarray,
    K: int,
    *,
    beta_start: np.ndarray | None = None,
    ridge: float = DEFAULT_RIDGE,
    max_iter: int = 100,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Hard-assignment (classification) EM.

    Alternates per-class Poisson fits on the units currently assigned to
    each class with reassignment of every unit to its best class.  The
    complete-data log-likelihood is nondecreasing.  Returns
    ``(beta, classes, loglik)``.
    """
    classes = np.asarray(classes, dtype=np.int64).copy()
    P = stack.X.shape[1]
    beta = np.zeros((K, P)) if beta_start is None else np.array(beta_start, dtype=float)
    ll = -np.inf
    warm = beta_start is not None
    for _ in range(max_iter):
        row_class = classes[stack.group]
        for k in range(K):
            rows = row_class == k
            if not np.any(rows):
                continue
            beta[k] = fit_weighted_poisson(
                stack.X[rows], stack.y[rows], stack.offset[rows],
                ridge=ridge, start=beta[k] if warm else None, covariance=False,
            ).beta
        warm = True
        L = stack.unit_loglik(beta)
        ll = float(L[np.arange(L.shape[0]), classes].sum())
        best = np.argmax(L, axis=1)
        improve = L[np.arange(L.shape[0]), best] > L[np.arange(L.shape[0]), classes] + 1e-12
        if not np.any(improve):
            break
        classes[improve] = best[improve]
        ll = float(L[np.arange(L.shape[0]), classes].sum())
    return beta, classes, ll


def save_model(model: DlcModel, path: str | Path, extra: dict | None = None) -> None:
    doc = model.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")


def load_model(path: str | Path) -> DlcModel:
    return DlcModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
