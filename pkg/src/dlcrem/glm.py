"""Weighted maximum-likelihood solvers used by the M-step.

Both solvers run damped Newton iterations (IRLS for the Poisson case) on a
ridge-penalized objective; the step is halved until the objective does not
decrease, so the iterates are monotone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.special import gammaln, log_softmax

DEFAULT_RIDGE = 1e-8
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
MAX_COEF = 1e4


class SolverError(RuntimeError):
    """Numerical failure in a GLM solver."""


class SeparationError(SolverError):
    pass


@dataclass
class WeightedPoissonFit:
    beta: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    grad_norm: float
    covariance: np.ndarray | None = None
    rank_deficient: tuple[str, ...] = ()

    @property
    def se(self) -> np.ndarray:
        if self.covariance is None:
            return np.full(self.beta.shape, np.nan)
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))


@dataclass
class MultinomialFit:
    """Concomitant coefficients ``gamma [(K-1), Q+1]``; class K is the reference."""

    gamma: np.ndarray
    loglik: float
    converged: bool
    iterations: int = 0
    grad_norm: float = 0.0
    covariance: np.ndarray | None = None
    names: tuple[str, ...] = field(default=())

    @property
    def K(self) -> int:
        return self.gamma.shape[0] + 1

    @property
    def se(self) -> np.ndarray:
        if self.covariance is None:
            return np.full(self.gamma.shape, np.nan)
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None)).reshape(self.gamma.shape)

    def predict(self, W: np.ndarray) -> np.ndarray:
        return predict_class_probs(self.gamma, W)


def _solve_spd(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), g)
    except (np.linalg.LinAlgError, ValueError):
        return scipy.linalg.lstsq(H, g)[0]


def _deficient_columns(H: np.ndarray, names: Sequence[str]) -> tuple[str, ...]:
    if H.size == 0:
        return ()
    _, R, piv = scipy.linalg.qr(H, pivoting=True)
    d = np.abs(np.diag(R))
    bad = piv[d <= 1e-10 * max(d[0], 1e-300)]
    return tuple(names[k] if k < len(names) else f"x{k}" for k in sorted(bad))


def _covariance(H: np.ndarray) -> np.ndarray:
    try:
        C = scipy.linalg.inv(H)
    except (np.linalg.LinAlgError, ValueError):
        C = scipy.linalg.pinv(H)
    return 0.5 * (C + C.T)


def _accept(f, fc, g, gc) -> bool:
    """Ascent test for a candidate step.

    Near the optimum the objective change drops below its rounding error, so
    a step that lowers the gradient is also accepted when the objective is
    unchanged up to a few ulps.
    """
    if not np.isfinite(fc):
        return False
    if fc >= f:
        return True
    return fc >= f - 64 * np.finfo(float).eps * (abs(f) + 1.0) and np.max(np.abs(gc)) < np.max(np.abs(g))


def poisson_objective(beta, X, y, offset, w, ridge=0.0):
    """Penalized weighted Poisson log-likelihood (no ``log y!``) and its gradient.

    Overflowing trial points give ``-inf``/``nan`` and are rejected by the
    step search.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        eta = X @ beta + offset
        mu = np.exp(eta)
        f = float(w @ (y * eta - mu)) - 0.5 * ridge * float(beta @ beta)
        g = X.T @ (w * (y - mu)) - ridge * beta
    return f, g


def fit_weighted_poisson(
    X: np.ndarray,
    y: np.ndarray,
    offset: np.ndarray | None = None,
    weights: np.ndarray | None = None,
    *,
    ridge: float = DEFAULT_RIDGE,
    start: np.ndarray | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    names: Sequence[str] = (),
    covariance: bool = True,
) -> WeightedPoissonFit:
    """Maximize ``sum w * (y * eta - exp(eta)) - ridge/2 |beta|^2``, ``eta = X beta + offset``.

    Raises
    ------
    SeparationError
        If the coefficients diverge (increase ``ridge``).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative and not all zero")

    if start is not None:
        beta = np.array(start, dtype=float)
    else:
        # R-style start: one weighted least-squares pass on the working response
        mu0 = y + 0.1
        z = np.log(mu0) - offset + (y - mu0) / mu0
        ww = w * mu0
        A = (X * ww[:, None]).T @ X + ridge * np.eye(p)
        beta = _solve_spd(A, X.T @ (ww * z))
        # the least-squares start can overshoot badly on rows with large
        # unbounded statistics; the intercept-only solution is a safe rival
        const = np.flatnonzero(np.all(X == X[:1], axis=0) & (X[0] != 0))
        if const.size and w @ y > 0:
            alt = np.zeros(p)
            alt[const[0]] = np.log((w @ y) / (w @ np.exp(offset))) / X[0, const[0]]
            f_ls = poisson_objective(beta, X, y, offset, w, ridge)[0]
            if not np.isfinite(f_ls) or poisson_objective(alt, X, y, offset, w, ridge)[0] > f_ls:
                beta = alt

    f, g = poisson_objective(beta, X, y, offset, w, ridge)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g), initial=0.0) <= tol:
            converged = True
            it -= 1
            break
        mu = np.exp(X @ beta + offset)
        H = (X * (w * mu)[:, None]).T @ X + ridge * np.eye(p)
        step = _solve_spd(H, g)
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            fc, gc = poisson_objective(cand, X, y, offset, w, ridge)
            if _accept(f, fc, g, gc):
                break
            t *= 0.5
        else:
            # no ascent possible at working precision
            converged = float(g @ step) <= 1e-20 * max(1.0, abs(f)) or np.max(np.abs(g)) <= 1e3 * tol
            break
        beta, f, g = cand, fc, gc
        if np.max(np.abs(beta)) > MAX_COEF:
            raise SeparationError(
                f"Poisson coefficients diverge (|beta| > {MAX_COEF:g}); increase the ridge penalty"
            )
    else:
        converged = np.max(np.abs(g), initial=0.0) <= tol

    eta = X @ beta + offset
    mu = np.exp(eta)
    loglik = float(w @ (y * eta - mu - gammaln(y + 1.0)))
    cov, deficient = None, ()
    if covariance:
        H0 = poisson_information(X, beta, offset, w)
        cov = _covariance(H0 + ridge * np.eye(p))
        deficient = _deficient_columns(H0, list(names))
    return WeightedPoissonFit(
        beta=beta,
        loglik=loglik,
        converged=bool(converged),
        iterations=it,
        grad_norm=float(np.max(np.abs(g), initial=0.0)),
        covariance=cov,
        rank_deficient=deficient,
    )


def poisson_information(X, beta, offset=None, weights=None) -> np.ndarray:
    """Observed information ``X' diag(w mu) X`` (unpenalized)."""
    X = np.asarray(X, dtype=float)
    eta = X @ beta if offset is None else X @ beta + offset
    wmu = np.exp(eta) if weights is None else weights * np.exp(eta)
    return (X * wmu[:, None]).T @ X


def poisson_covariance(X, beta, offset=None, weights=None, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Inverse penalized information at ``beta``."""
    H = poisson_information(X, beta, offset, weights)
    return _covariance(H + ridge * np.eye(H.shape[0]))


def _linear_predictor(gamma: np.ndarray, W: np.ndarray) -> np.ndarray:
    W = np.atleast_2d(W)
    return np.hstack([W @ gamma.T, np.zeros((W.shape[0], 1))])


def log_class_probs(gamma: np.ndarray, W: np.ndarray) -> np.ndarray:
    return log_softmax(_linear_predictor(gamma, W), axis=1)


def predict_class_probs(gamma: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Softmax class probabilities with the reference class (last) fixed at 0."""
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[None, :]
    if gamma.size and W.shape[1] != gamma.shape[1]:
        raise ValueError(f"feature length {W.shape[1]} does not match gamma ({gamma.shape[1]})")
    return np.exp(log_class_probs(gamma, W))


def multinomial_objective(gamma, W, P, ridge=0.0):
    """Penalized ``sum_u sum_k P[u,k] log pi[u,k]`` and its gradient (same shape as gamma)."""
    logp = log_class_probs(gamma, W)
    f = float(np.sum(P * logp)) - 0.5 * ridge * float(np.sum(gamma * gamma))
    pi = np.exp(logp)
    g = (P - pi)[:, :-1].T @ W - ridge * gamma
    return f, g, pi


def _multinomial_information(pi: np.ndarray, W: np.ndarray, ridge: float) -> np.ndarray:
    km1 = pi.shape[1] - 1
    q = W.shape[1]
    p = pi[:, :-1]
    A = -p[:, :, None] * p[:, None, :]
    A[:, np.arange(km1), np.arange(km1)] += p
    H = np.einsum("ukl,ua,ub->kalb", A, W, W).reshape(km1 * q, km1 * q)
    return H + ridge * np.eye(km1 * q)


def fit_weighted_multinomial(
    W: np.ndarray,
    targets: np.ndarray,
    *,
    ridge: float = DEFAULT_RIDGE,
    start: np.ndarray | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    names: Sequence[str] = (),
) -> MultinomialFit:
    """Multinomial logit with fractional targets ``[U, K]`` (rows sum to 1)."""
    W = np.asarray(W, dtype=float)
    P = np.asarray(targets, dtype=float)
    U, K = P.shape
    q = W.shape[1]
    if W.shape[0] != U:
        raise ValueError("features and targets have different unit counts")
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-8:
        raise ValueError("target rows must sum to 1")
    if K == 1:
        return MultinomialFit(np.zeros((0, q)), 0.0, True, 0, 0.0, np.zeros((0, 0)), tuple(names))

    gamma = np.zeros((K - 1, q)) if start is None else np.array(start, dtype=float)
    f, g, pi = multinomial_objective(gamma, W, P, ridge)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= tol:
            converged = True
            it -= 1
            break
        H = _multinomial_information(pi, W, ridge)
        step = _solve_spd(H, g.reshape(-1)).reshape(gamma.shape)
        t = 1.0
        for _ in range(40):
            cand = gamma + t * step
            fc, gc, pic = multinomial_objective(cand, W, P, ridge)
            if _accept(f, fc, g, gc):
                break
            t *= 0.5
        else:
            converged = float(np.sum(g * step)) <= 1e-20 * max(1.0, abs(f)) or np.max(np.abs(g)) <= 1e3 * tol
            break
        gamma, f, g, pi = cand, fc, gc, pic
        if np.max(np.abs(gamma)) > MAX_COEF:
            raise SeparationError(
                f"multinomial coefficients diverge (|gamma| > {MAX_COEF:g}); increase the ridge penalty"
            )
    else:
        converged = np.max(np.abs(g)) <= tol

    loglik = float(np.sum(P * log_class_probs(gamma, W)))
    return MultinomialFit(
        gamma=gamma,
        loglik=loglik,
        converged=bool(converged),
        iterations=it,
        grad_norm=float(np.max(np.abs(g))),
        covariance=_covariance(_multinomial_information(pi, W, ridge)),
        names=tuple(names),
    )
