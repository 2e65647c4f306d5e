import numpy as np
import pytest
from scipy.stats import chi2_contingency

from dissca.eca import evolve, rule_from_number, single_seed, step
from dissca.stochastic import (
    CycleSchedule,
    RingPair,
    bernoulli_update,
    gillespie_update,
    run_ensemble,
    run_trajectory,
    sample_cycle_bernoulli,
    sample_cycle_gillespie,
    trajectory_rngs,
)

R110 = rule_from_number(110)


def outcome_codes(rings):
    weights = 1 << np.arange(rings.shape[1])[::-1]
    return rings.astype(np.int64) @ weights


def test_schedule_validation():
    with pytest.raises(ValueError):
        CycleSchedule(0.0, 1.0)
    with pytest.raises(ValueError):
        CycleSchedule(1.0, 1.0, phi=1.5)
    assert CycleSchedule(2.0, 3.0).p_miss == pytest.approx(np.exp(-6.0))
    assert CycleSchedule(1.0, 1.0, phi=0.5).classical_rate == pytest.approx(0.5)


def test_ring_pair_roles():
    s = RingPair.from_initial([0, 1, 0, 1])
    assert s.input_is_a
    s2 = s.with_output(np.array([1, 1, 1, 1], np.uint8))
    assert not s2.input_is_a
    assert s2.input_ring.tolist() == [1, 1, 1, 1]
    assert s2.output_ring.tolist() == [0, 1, 0, 1]
    with pytest.raises(ValueError):
        RingPair([0, 0, 0], [0, 0, 0, 0])


def test_bernoulli_limits():
    rng = np.random.default_rng(0)
    s = RingPair(np.array([0, 0, 1, 0, 0], np.uint8), np.array([1, 0, 1, 1, 0], np.uint8))
    exact = sample_cycle_bernoulli(s, R110, 0.0, rng)
    assert np.array_equal(exact.input_ring, step(R110, s.input_ring))
    assert np.array_equal(exact.output_ring, s.input_ring)
    frozen = sample_cycle_bernoulli(s, R110, 1.0, rng)
    assert np.array_equal(frozen.input_ring, s.output_ring)
    assert np.array_equal(frozen.output_ring, s.input_ring)
    with pytest.raises(ValueError):
        sample_cycle_bernoulli(s, R110, 1.2, rng)


def test_gillespie_long_cycle_is_exact():
    rng = np.random.default_rng(1)
    s = RingPair(np.array([0, 1, 1, 0, 1, 0, 0], np.uint8), np.zeros(7, np.uint8) + 1)
    for _ in range(20):
        out = sample_cycle_gillespie(s, R110, CycleSchedule(1.0, 60.0), rng)
        assert np.array_equal(out.input_ring, step(R110, s.input_ring))


def test_gillespie_frozen_input():
    rng = np.random.default_rng(2)
    inp = rng.integers(0, 2, (1000, 6)).astype(np.uint8)
    keep = inp.copy()
    gillespie_update(R110, inp, 1 - step(R110, inp), 1.0, 3.0, rng)
    assert np.array_equal(inp, keep)


def test_gillespie_miss_law():
    # Poisson-clock survival: a wrong site stays stale with probability exp(-gamma t_c)
    rng = np.random.default_rng(5)
    samples, gtc = 100_000, 1.5
    inp = np.tile(np.array([0, 1, 1, 0, 1], np.uint8), (samples, 1))
    target = step(R110, inp)
    out = gillespie_update(R110, inp, 1 - target, 1.0, gtc, rng)
    p = np.exp(-gtc)
    freq = (out != target).mean(axis=0)
    sigma = np.sqrt(p * (1 - p) / samples)
    assert np.all(np.abs(freq - p) < 3 * sigma)


@pytest.mark.parametrize("n", [3, 4, 5])
@pytest.mark.parametrize("number", [30, 110, 137])
@pytest.mark.parametrize("gtc", [1.0, 4.0, 10.0])
def test_sampler_equivalence_chi_square(n, number, gtc):
    # stale outputs are the complement of the target, so the outcome reveals
    # the full update mask and covers every other stale configuration
    rule = rule_from_number(number)
    samples = 100_000
    rng = np.random.default_rng([n, number, int(gtc)])
    inp = np.tile(rng.integers(0, 2, n).astype(np.uint8), (samples, 1))
    stale = 1 - step(rule, inp)
    a = gillespie_update(rule, inp, stale, 1.0, gtc, rng)
    b = bernoulli_update(rule, inp, stale, np.exp(-gtc), rng.random(inp.shape))
    ca, cb = outcome_codes(a), outcome_codes(b)
    cats = np.union1d(ca, cb)
    table = np.array([[np.sum(ca == c) for c in cats], [np.sum(cb == c) for c in cats]])
    if len(cats) == 1:
        return
    assert chi2_contingency(table)[1] > 0.01


def test_noise_free_trajectory_matches_orbit():
    c0 = single_seed(15)
    hist = run_trajectory(c0, R110, CycleSchedule(1.0, 1e6), 40, np.random.default_rng(0))
    assert np.array_equal(hist, evolve(R110, c0, 40))


def test_trajectory_reproducible():
    sched = CycleSchedule(1.0, 4.0)
    c0 = single_seed(13)
    h1 = run_trajectory(c0, R110, sched, 50, np.random.default_rng(9))
    h2 = run_trajectory(c0, R110, sched, 50, np.random.default_rng(9))
    assert np.array_equal(h1, h2)
    assert h1.shape == (51, 13)
    with pytest.raises(ValueError):
        run_trajectory(c0, R110, sched, 0, np.random.default_rng(9))


def test_ensemble_rows_equal_single_trajectories():
    sched = CycleSchedule(1.0, 4.0)
    c0 = single_seed(11)
    ens = run_ensemble(c0, R110, sched, 30, 6, master_seed=42)
    rngs = trajectory_rngs(42, range(6))
    for k in range(6):
        assert np.array_equal(ens[k], run_trajectory(c0, R110, sched, 30, rngs[k]))
    part = run_ensemble(c0, R110, sched, 30, 2, master_seed=42, first_index=4)
    assert np.array_equal(part, ens[4:])


def test_stale_site_keeps_cycle_before_last():
    c0 = np.array([0, 0, 1, 0, 0, 0], np.uint8)
    hist = run_trajectory(c0, R110, CycleSchedule(1.0, 1e-12), 3, np.random.default_rng(0))
    # nothing fires: the rings just alternate between the start and its hidden copy
    assert np.all(hist == c0)
