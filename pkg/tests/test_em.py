import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlcrem.em import (
    DegenerateFitError,
    DlcSpec,
    canonical_order,
    e_step,
    fit,
    fit_classification,
    load_model,
    observed_loglik,
    rereference_gamma,
    save_model,
)
from dlcrem.glm import fit_weighted_poisson, predict_class_probs

from conftest import array_stack, two_class_stack


def poisson_pmf(y, lam):
    return math.exp(-lam) * lam**y / math.factorial(int(y))


def enumerate_loglik(beta, priors, X, y, widths):
    """Sum over every joint class assignment of all dyads."""
    M, D, _ = X.shape
    K = beta.shape[0]
    lik = np.ones((D, K))
    for d in range(D):
        for k in range(K):
            for m in range(M):
                lik[d, k] *= poisson_pmf(y[m, d], widths[m] * math.exp(X[m, d] @ beta[k]))
    total = 0.0
    for z in itertools.product(range(K), repeat=D):
        total += math.prod(priors[d, z[d]] * lik[d, z[d]] for d in range(D))
    return math.log(total)


def tiny_problem(seed):
    rng = np.random.default_rng(seed)
    M, D = 3, 4
    X = np.stack([np.ones((M, D)), rng.normal(size=(M, D))], axis=2)
    y = rng.poisson(np.where(np.arange(D) < 2, 0.4, 2.5), (M, D))
    widths = rng.uniform(0.5, 1.5, M)
    return X, y, widths


@pytest.mark.parametrize("seed", range(4))
def test_loglik_at_fit_matches_enumeration(seed):
    X, y, widths = tiny_problem(seed)
    st_ = array_stack(X, y, widths)
    F = np.random.default_rng(seed).normal(size=(4, 1))
    model, _ = fit(st_, F, DlcSpec(K=2, n_starts=3, seed=seed, ridge=1e-2))
    W = np.hstack([np.ones((4, 1)), F])
    pri = predict_class_probs(model.gamma, W)
    assert model.loglik == pytest.approx(enumerate_loglik(model.beta, pri, X, y, widths), abs=1e-8)
    assert model.observed_loglik(st_, F) == pytest.approx(model.loglik, abs=1e-8)


def test_e_step_matches_extended_precision():
    rng = np.random.default_rng(9)
    M, D = 30, 5
    X = np.stack([np.ones((M, D)), rng.normal(size=(M, D))], axis=2)
    y = rng.poisson(3.0, (M, D))
    st_ = array_stack(X, y)
    beta = np.array([[0.5, 0.1], [1.5, -0.3], [1.0, 0.4]])
    gamma = np.array([[0.3], [-0.2]])
    post = e_step(beta, gamma, st_)
    mpmath.mp.dps = 50
    prior = [mpmath.e ** mpmath.mpf(0.3), mpmath.e ** mpmath.mpf(-0.2), mpmath.mpf(1)]
    for d in range(D):
        terms = []
        for k in range(3):
            lp = mpmath.mpf(0)
            for m in range(M):
                eta = mpmath.mpf(float(X[m, d, 0])) * beta[k, 0] + mpmath.mpf(float(X[m, d, 1])) * beta[k, 1]
                lp += int(y[m, d]) * eta - mpmath.e**eta - mpmath.loggamma(int(y[m, d]) + 1)
            terms.append(prior[k] * mpmath.e**lp)
        tot = sum(terms)
        for k in range(3):
            assert abs(post[d, k] - float(terms[k] / tot)) <= 1e-10


def test_e_step_survives_huge_logliks():
    X = np.ones((1, 2, 1))
    y = np.array([[5000, 0]])
    st_ = array_stack(X, y)
    post = e_step(np.array([[np.log(5000.0)], [0.0]]), np.zeros((1, 1)), st_)
    assert np.all(np.isfinite(post))
    np.testing.assert_allclose(post.sum(axis=1), 1.0)
    assert post[0, 0] == pytest.approx(1.0)


@pytest.mark.parametrize("K", [2, 3])
def test_every_trace_is_monotone(K):
    st_, _, _ = two_class_stack(1)
    F = np.random.default_rng(1).normal(size=(st_.n_groups, 1))
    _, diag = fit(st_, F, DlcSpec(K=K, n_starts=4, seed=2))
    for tr in diag.traces:
        assert np.all(np.diff(tr) >= -1e-8)


def test_k1_is_plain_poisson_regression():
    st_, _, _ = two_class_stack(2)
    model, _ = fit(st_, None, DlcSpec(K=1, n_starts=1))
    glm = fit_weighted_poisson(st_.X, st_.y, st_.offset, ridge=model.spec.ridge)
    np.testing.assert_allclose(model.beta[0], glm.beta, atol=1e-7)
    assert model.loglik == pytest.approx(glm.loglik, abs=1e-6)
    assert model.n_params == 2
    assert model.gamma.shape == (0, 1)


def test_recovers_planted_classes():
    st_, z, beta = two_class_stack(3, D=40, M=60)
    model, diag = fit(st_, None, DlcSpec(K=2, n_starts=3))
    hard = model.hard_classes
    agree = max(np.mean(hard == z), np.mean(hard == 1 - z))
    assert agree == 1.0
    quiet = int(np.argmin(model.beta[:, 0]))
    np.testing.assert_allclose(model.beta[quiet], beta[0], atol=0.35)
    assert diag.best_start in range(3)


def test_canonical_order_puts_largest_class_last():
    st_, _, _ = two_class_stack(4, D=31)
    model, _ = fit(st_, None, DlcSpec(K=2, n_starts=2))
    mass = model.posteriors.sum(axis=0)
    assert mass[0] <= mass[1]


def test_rereference_preserves_probabilities():
    rng = np.random.default_rng(5)
    gamma = rng.normal(size=(3, 2))
    W = np.hstack([np.ones((7, 1)), rng.normal(size=(7, 1))])
    p = predict_class_probs(gamma, W)
    order = np.array([2, 0, 3, 1])
    np.testing.assert_allclose(predict_class_probs(rereference_gamma(gamma, order), W), p[:, order], atol=1e-12)
    assert canonical_order(np.array([[0.2, 0.5, 0.3]])).tolist() == [0, 2, 1]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_relabeling_the_start_changes_nothing(seed):
    st_, _, _ = two_class_stack(seed % 7, D=12, M=15)
    init = np.random.default_rng(seed).dirichlet([1, 1], size=12)
    spec = DlcSpec(K=2, n_starts=1, seed=seed)
    a, _ = fit(st_, None, spec, extra_starts=[init])
    b, _ = fit(st_, None, spec, extra_starts=[init[:, ::-1]])
    # swapped start columns land on the same canonical solution
    assert a.loglik == pytest.approx(b.loglik, abs=1e-6)
    np.testing.assert_allclose(a.beta, b.beta, atol=1e-4)


def test_fit_is_deterministic():
    st_, _, _ = two_class_stack(6)
    a, da = fit(st_, None, DlcSpec(K=2, n_starts=3, seed=11))
    b, db = fit(st_, None, DlcSpec(K=2, n_starts=3, seed=11))
    np.testing.assert_array_equal(a.beta, b.beta)
    assert da.start_logliks == db.start_logliks


def test_model_round_trip(tmp_path):
    st_, _, _ = two_class_stack(7)
    F = np.random.default_rng(7).normal(size=(st_.n_groups, 2))
    model, _ = fit(st_, F, DlcSpec(K=2, n_starts=2), feature_names=["a", "b"])
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(back.beta, model.beta)
    np.testing.assert_array_equal(back.gamma, model.gamma)
    np.testing.assert_array_equal(back.posteriors, model.posteriors)
    assert back.feature_names == ("a", "b")
    assert back.n_params == model.n_params == 2 * 2 + 1 * 3
    assert back.observed_loglik(st_, F) == pytest.approx(model.loglik, abs=1e-8)


def test_too_many_classes_is_degenerate():
    X = np.ones((20, 2, 1))
    y = np.zeros((20, 2))
    y[:, 0] = 50
    with pytest.raises(DegenerateFitError, match="empty class"):
        fit(array_stack(X, y), None, DlcSpec(K=3, n_starts=3))


def test_identical_dyads_flag_non_identifiable():
    rng = np.random.default_rng(8)
    X = np.ones((50, 10, 1))
    y = rng.poisson(1.0, (50, 10))
    model, diag = fit(array_stack(X, y), None, DlcSpec(K=2, n_starts=6, seed=3))
    assert isinstance(diag.non_identifiable, bool)
    assert np.isfinite(model.loglik)


def test_classification_em_is_monotone():
    st_, z, _ = two_class_stack(9)
    init = np.random.default_rng(0).integers(0, 2, st_.n_groups)
    beta, classes, ll = fit_classification(st_, init, 2)
    _, _, ll0 = fit_classification(st_, init, 2, max_iter=1)
    assert ll >= ll0 - 1e-9
    assert max(np.mean(classes == z), np.mean(classes == 1 - z)) == 1.0


def test_observed_loglik_with_fixed_priors_matches_enumeration():
    X, y, widths = tiny_problem(11)
    st_ = array_stack(X, y, widths)
    beta = np.array([[-1.0, 0.2], [0.8, -0.1]])
    pri = np.random.default_rng(0).dirichlet([1, 1], size=4)
    assert observed_loglik(beta, None, st_, priors=pri) == pytest.approx(
        enumerate_loglik(beta, pri, X, y, widths), abs=1e-10
    )
