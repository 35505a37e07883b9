import numpy as np
import pytest
from hypothesis import strategies as st

from dlcrem.events import make_history


def random_history(rng, n_actors=5, n_events=60, tie_prob=0.3, burn_in=0, riskset="full"):
    """Random history with some simultaneous events and an optional burn-in prefix."""
    s = rng.integers(0, n_actors, n_events)
    r = (s + rng.integers(1, n_actors, n_events)) % n_actors
    gaps = rng.exponential(1.0, n_events)
    gaps[1:][rng.random(n_events - 1) < tie_prob] = 0.0
    times = np.round(np.cumsum(gaps) + 0.5, 6)
    burn = float(times[burn_in - 1]) if burn_in else None
    if burn is not None and burn >= times[-1]:
        burn = None
    return make_history(s, r, times, actors=n_actors, burn_in_end=burn, riskset=riskset)


@st.composite
def histories(draw, max_actors=8, max_events=200):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(2, max_actors))
    e = draw(st.integers(1, max_events))
    burn = draw(st.integers(0, min(e - 1, 20)))
    tie = draw(st.sampled_from([0.0, 0.3, 0.7]))
    return random_history(np.random.default_rng(seed), n, e, tie, burn)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def array_stack(X, y, widths=None, mode="directed", senders=None, receivers=None):
    """StatStack from ``X [M, D, P]`` and ``y [M, D]`` without an event history."""
    from scipy.special import gammaln

    from dlcrem.stack import StatStack, symmetric_groups

    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    M, D, P = X.shape
    widths = np.ones(M) if widths is None else np.asarray(widths, dtype=float)
    gmap = np.arange(D) if mode == "directed" else symmetric_groups(np.asarray(senders), np.asarray(receivers))
    dyad = np.tile(np.arange(D), M)
    yy = y.reshape(-1)
    return StatStack(
        X=X.reshape(M * D, P), y=yy, offset=np.repeat(np.log(widths), D), dyad=dyad,
        interval=np.repeat(np.arange(M), D), group=gmap[dyad], names=tuple(f"x{p}" for p in range(P)),
        n_dyads=D, n_intervals=M, n_groups=int(gmap.max()) + 1, group_of_dyad=gmap,
        log_y_factorial=gammaln(yy + 1.0), mode=mode,
    )


def two_class_stack(seed=0, D=30, M=40):
    """Dyads split into a busy and a quiet class, intercept plus one covariate."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(M, D))
    X = np.stack([np.ones((M, D)), x], axis=2)
    z = (np.arange(D) >= D // 2).astype(int)
    beta = np.array([[-2.5, 0.2], [-0.3, 0.8]])
    lam = np.exp(np.einsum("mdp,dp->md", X, beta[z]))
    y = rng.poisson(lam)
    return array_stack(X, y), z, beta
