import numpy as np
import pytest
from scipy import stats

from dlcrem.events import build_riskset, counts, history_from_dict, history_to_dict
from dlcrem.simulate import GenSpec, GenSpecError, block_pattern, design_spec, generate, sb_pattern


def uniform_spec(n_events, seed=1):
    return GenSpec(n_actors=10, class_map=np.zeros(90, dtype=int), beta={"intercept": [0.0]},
                   statistics=(), n_events=n_events, seed=seed)


def test_uniform_rates_give_uniform_dyads():
    h, _ = generate(uniform_spec(10000))
    obs = counts(h).sum(axis=1)
    assert obs.sum() == 10000
    _, p = stats.chisquare(obs)
    assert p > 0.001


def test_waiting_times_are_exponential():
    h, _ = generate(uniform_spec(3000, seed=2))
    t = np.array([e.time for e in h.events])
    gaps = np.diff(np.r_[0.0, t])
    # total rate is 90 * exp(0)
    _, p = stats.kstest(gaps, "expon", args=(0, 1 / 90))
    assert p > 0.001


def test_inertia_repeat_probability_monte_carlo():
    b = 1.5
    reps = 400
    hits = 0
    for seed in range(reps):
        spec = GenSpec(n_actors=4, class_map=np.zeros(12, dtype=int),
                       beta={"intercept": [0.0], "inertia": [b]}, statistics=("inertia",), n_events=2, seed=seed)
        h, _ = generate(spec)
        e0, e1 = h.events[0], h.events[1]
        hits += (e0.sender, e0.receiver) == (e1.sender, e1.receiver)
    p = np.exp(b) / (np.exp(b) + 11)
    assert stats.binomtest(hits, reps, p).pvalue > 0.001


def test_generation_is_deterministic():
    a, ca = generate(design_spec(seed=5, n_events=300))
    b, cb = generate(design_spec(seed=5, n_events=300))
    assert history_to_dict(a) == history_to_dict(b)
    np.testing.assert_array_equal(ca, cb)
    c, _ = generate(design_spec(seed=6, n_events=300))
    assert history_to_dict(a) != history_to_dict(c)


def test_round_trip_and_burn_in():
    h, _ = generate(design_spec(seed=1, n_events=200, burn_in_events=50))
    back = history_from_dict(history_to_dict(h))
    assert history_to_dict(back) == history_to_dict(h)
    assert h.n_modeled == 150


def test_block_pattern_four_regions():
    cmap = block_pattern(10, 4, 6, ((0, 2), (1, 3)))
    rs = build_riskset(10, "full")
    for d in range(90):
        i, j = rs.senders[d], rs.receivers[d]
        expect = (0 if i < 4 else 1) + (0 if j < 6 else 2)
        assert cmap[d] == expect
    sizes = np.bincount(cmap)
    assert sizes.sum() == 90 and sizes[2] == 16


def test_block_pattern_six_regions():
    cmap = block_pattern(9, [3, 6], 5, [[0, 1], [2, 3], [4, 5]])
    assert set(cmap.tolist()) == set(range(6))
    with pytest.raises(GenSpecError):
        block_pattern(9, [6, 3], 5, [[0, 1], [2, 3], [4, 5]])
    with pytest.raises(GenSpecError, match="shape"):
        block_pattern(9, 3, 5, [[0, 1]])


def test_sb_pattern():
    m = [0, 0, 1, 1, 1]
    cmap = sb_pattern(m)
    rs = build_riskset(5, "full")
    np.testing.assert_array_equal(cmap, 2 * np.array(m)[rs.senders] + np.array(m)[rs.receivers])


def test_genspec_errors():
    cmap = np.zeros(90, dtype=int)
    with pytest.raises(GenSpecError, match="missing"):
        GenSpec(10, cmap, {"intercept": [0.0]}, statistics=("inertia",))
    with pytest.raises(GenSpecError, match="unknown"):
        GenSpec(10, cmap, {"intercept": [0.0], "foo": [1.0]}, statistics=())
    with pytest.raises(GenSpecError, match="classes"):
        GenSpec(10, cmap, {"intercept": [0.0, 1.0]}, statistics=())
    with pytest.raises(GenSpecError, match="directed dyads"):
        GenSpec(10, np.zeros(5, dtype=int), {"intercept": [0.0]}, statistics=())
    with pytest.raises(GenSpecError, match="covariate"):
        GenSpec(10, cmap, {"intercept": [0.0], "x_send": [1.0]},
                statistics=({"name": "actor_covariate", "covariate": "x", "direction": "send"},))


def test_underflowing_rates_raise():
    spec = GenSpec(4, np.zeros(12, dtype=int), {"intercept": [-800.0]}, statistics=(), n_events=3)
    with pytest.raises(FloatingPointError, match="underflow"):
        generate(spec)
