import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import unitary_group

from dissca.eca import rule_from_number
from dissca.liouville.operators import (
    P1,
    SIGMA_MINUS,
    Generator,
    JumpOperator,
    build_classical_jumps,
    build_rk_jumps,
)
from dissca.liouville.states import integrate_density, projector, ring_pair_state
from dissca.vqs import (
    SIGMA_X,
    SIGMA_Z,
    CostFunctional,
    LayeredAnsatz,
    RydbergModel,
    apply_channel_layer,
    apply_channel_layer_kraus,
    apply_global_unitary,
    choi_matrix,
    cost_fv,
    fidelity_error,
    heisenberg_action,
    kraus_damping,
    kraus_dephasing,
    local_observables,
    optimize_layerwise,
    pauli_words,
    rydberg_hamiltonian,
    swap_rails,
)

THETAS = [0.01, 0.1, 1.0, 10.0]


def random_density(d, rng, rank=None):
    rank = rank or d
    a = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_hermitian(d, rng):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return a + a.conj().T


# --- channels ---------------------------------------------------------------


def test_damping_limits():
    d1, d2 = kraus_damping(0.0)
    assert np.allclose(d1, 0) and np.allclose(d2, np.eye(2))
    rho = np.array([[0.3, 0.2], [0.2, 0.7]], complex)
    d1, d2 = kraus_damping(60.0)
    out = d1 @ rho @ d1.conj().T + d2 @ rho @ d2.conj().T
    assert np.allclose(out, np.diag([1, 0]))


def test_dephasing_limits():
    k1, k2 = kraus_dephasing(0.0)
    assert np.allclose(k1, np.eye(2) / np.sqrt(2)) and np.allclose(k2, k1)
    rho = np.array([[0.3, 0.2], [0.2, 0.7]], complex)

    def apply(theta):
        return sum(k @ rho @ k.conj().T for k in kraus_dephasing(theta))

    # coherences scale by 2 exp(-theta) - 1: erased at ln 2, sign-flipped as theta grows
    assert np.allclose(apply(np.log(2.0)), np.diag([0.3, 0.7]))
    assert np.allclose(apply(60.0), SIGMA_Z @ rho @ SIGMA_Z)
    for theta in (0.3, 2.0):
        assert apply(theta)[0, 1] == pytest.approx(0.2 * (2 * np.exp(-theta) - 1))


@pytest.mark.parametrize("theta", THETAS)
@pytest.mark.parametrize("channel", [kraus_damping, kraus_dephasing])
def test_kraus_completeness(channel, theta):
    ks = channel(theta)
    assert np.abs(sum(k.conj().T @ k for k in ks) - np.eye(2)).max() < 1e-12


@pytest.mark.parametrize("theta", THETAS)
@pytest.mark.parametrize("channel", [kraus_damping, kraus_dephasing])
def test_choi_positivity(channel, theta):
    choi = choi_matrix(channel(theta))
    assert np.linalg.eigvalsh(choi).min() >= -1e-10
    # partial trace over the output equals the identity for a TP map
    assert np.allclose(choi.reshape(2, 2, 2, 2).trace(axis1=1, axis2=3), np.eye(2))


def test_printed_dephasing_is_not_trace_preserving():
    ks = kraus_dephasing(1.0, printed=True)
    total = sum(k.conj().T @ k for k in ks)
    assert np.allclose(total, (np.exp(-0.5) + 1 - np.exp(-1.0)) * np.eye(2))


def test_negative_strength_rejected():
    with pytest.raises(ValueError):
        kraus_damping(-0.1)
    with pytest.raises(ValueError):
        kraus_dephasing(-0.1)


def test_channel_layer_identity_and_full_damping():
    rho = random_density(8, np.random.default_rng(0))
    assert np.allclose(apply_channel_layer(rho, 0.0, 0.0), rho)
    single = np.array([[0.4, 0.1j], [-0.1j, 0.6]])
    assert np.allclose(apply_channel_layer(single, 80.0, 0.0), np.diag([1, 0]))


@pytest.mark.parametrize("theta", THETAS)
def test_channel_layer_trace_preserving(theta):
    rng = np.random.default_rng(int(theta * 100))
    for _ in range(100):
        rho = random_density(16, rng, rank=3)
        out = apply_channel_layer(rho, theta, rng.uniform(0, 10))
        assert abs(np.trace(out) - 1) < 1e-10
        assert np.linalg.eigvalsh(out).min() > -1e-10


@settings(max_examples=40, deadline=None)
@given(
    td=st.floats(0, 8),
    tp=st.floats(0, 8),
    sites=st.sets(st.integers(0, 3), min_size=1),
    seed=st.integers(0, 2**31),
)
def test_closed_form_matches_kraus(td, tp, sites, seed):
    rho = random_density(16, np.random.default_rng(seed))
    sites = sorted(sites)
    a = apply_channel_layer(rho, td, tp, sites)
    b = apply_channel_layer_kraus(rho, td, tp, sites)
    assert np.abs(a - b).max() < 1e-12


# --- Rydberg model ----------------------------------------------------------


def test_single_site_hamiltonian():
    m = RydbergModel(np.array([[0.0, 0.0]]), omega=2.0)
    assert np.allclose(rydberg_hamiltonian(m), SIGMA_X)


def test_pair_interaction():
    m = RydbergModel(np.array([[0.0, 0.0], [1.0, 0.0]]))
    h = rydberg_hamiltonian(m)
    assert h[3, 3] == pytest.approx(100.0)
    assert np.allclose(np.diag(h)[:3], 0)


def test_random_geometry_structure():
    rng = np.random.default_rng(2)
    m = RydbergModel(rng.uniform(0, 4, (4, 2)), omega=0.7, c6=30.0)
    h = rydberg_hamiltonian(m)
    assert np.allclose(h, h.conj().T)
    assert np.allclose(h - np.diag(np.diag(h)), rydberg_hamiltonian(RydbergModel(m.positions, 0.7, 1e-12)))
    sub = rydberg_hamiltonian(m, [0, 2])
    assert np.allclose(np.diag(sub)[[0, 2, 8, 10]], [0, 0, 0, np.diag(h)[10]])
    assert np.allclose(np.diag(sub)[[1, 4, 5]], 0)


def test_model_validation():
    with pytest.raises(ValueError):
        RydbergModel(np.array([[0.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        RydbergModel(np.array([[0.0, 0.0]]), c6=-1.0)
    with pytest.raises(ValueError):
        rydberg_hamiltonian(RydbergModel(np.array([[0.0, 0.0]])), [])


def test_two_rail_geometry():
    m = RydbergModel.two_rails(3)
    assert m.blockade_radius == pytest.approx(2.154, abs=1e-3)
    d = m.distances()
    assert d[0, 1] == d[0, 2] == d[0, 3] == pytest.approx(1.0)
    assert d[0, 4] == pytest.approx(np.sqrt(2))


def test_global_unitary_identity_and_purity():
    m = RydbergModel.two_rails(3)
    rho = random_density(64, np.random.default_rng(3), rank=2)
    assert np.allclose(apply_global_unitary(rho, m, 0.0, 0.0), rho)
    out = apply_global_unitary(rho, m, 0.4, 1.3)
    assert abs(np.trace(out @ out) - np.trace(rho @ rho)) < 1e-12
    with pytest.raises(ValueError):
        apply_global_unitary(rho, m, -1.0, 0.0)


def test_blockade_suppresses_double_excitation():
    rho = np.zeros((4, 4), complex)
    rho[0, 0] = 1
    pos = np.array([[0.0, 0.0], [1.0, 0.0]])
    free = apply_global_unitary(rho, RydbergModel(pos, c6=1e-9), np.pi, 0.0, rails=([0], [1]))
    blocked = apply_global_unitary(rho, RydbergModel(pos), np.pi, 0.0, rails=([0], [1]))
    assert free[3, 3].real == pytest.approx(1.0)
    assert blocked[3, 3].real == pytest.approx(3.1651183322574405e-05, rel=1e-6)


# --- Heisenberg picture -----------------------------------------------------


def test_heisenberg_identity_is_zero():
    gen = Generator.lindblad(build_rk_jumps(3))
    assert np.abs(heisenberg_action(gen, np.eye(64))).max() < 1e-12


def test_heisenberg_damping_sigma_z():
    gen = Generator.lindblad([JumpOperator.dense(SIGMA_MINUS)])
    # d<sigma_z>/dt = 2 p_1: population flows towards |0>
    assert np.allclose(heisenberg_action(gen, SIGMA_Z), 2 * P1)


@pytest.mark.parametrize("kind", ["classical", "rk"])
def test_duality(kind):
    jumps = build_classical_jumps(rule_from_number(137), 3) if kind == "classical" else build_rk_jumps(3)
    gen = Generator.lindblad(jumps, 0.8)
    rng = np.random.default_rng(4)
    for _ in range(100):
        rho = random_density(64, rng, rank=4)
        obs = random_hermitian(64, rng)
        lhs = np.trace(gen.apply(rho) @ obs)
        rhs = np.trace(rho @ heisenberg_action(gen, obs))
        assert abs(lhs - rhs) < 1e-10


def test_duality_with_hamiltonian():
    rng = np.random.default_rng(5)
    gen = Generator(1, (JumpOperator.dense(SIGMA_MINUS),), (0.4,), hamiltonian=random_hermitian(2, rng))
    rho, obs = random_density(2, rng), random_hermitian(2, rng)
    assert np.trace(gen.apply(rho) @ obs) == pytest.approx(np.trace(rho @ gen.adjoint(obs)))


# --- observables and cost ---------------------------------------------------


def test_pauli_word_counts():
    assert len(pauli_words([(0, 1, 2)], 3)) == 63
    assert len(pauli_words([(0, 1, 2)], 3, include_identity=True)) == 64
    assert len(pauli_words([(0, 1), (1, 2)], 3)) == 15 + 12
    assert len(local_observables(3)) == 63 + 63 + 3 * 45


def test_cost_zero_generator():
    obs = local_observables(3)
    rho = random_density(64, np.random.default_rng(6))
    assert cost_fv(rho, rho, 0.3, obs, Generator(6)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        CostFunctional(Generator(6), obs, 0.0)


def _exact_cost(tau):
    gen = Generator.lindblad(build_rk_jumps(3), 0.5) + Generator.lindblad(
        build_classical_jumps(rule_from_number(137), 3), 0.5
    )
    rho0 = projector(ring_pair_state([0, 1, 0], [1, 1, 0]))
    rho1 = integrate_density(gen, rho0, [tau])[0]
    return cost_fv(rho1, rho0, tau, local_observables(3), gen)


def test_cost_is_third_order_at_exact_state():
    taus = [0.2, 0.1, 0.05]
    costs = [_exact_cost(t) for t in taus]
    orders = np.log2(np.array(costs[:-1]) / np.array(costs[1:]))
    assert np.all(orders > 2.7)


# --- ansatz -----------------------------------------------------------------


@pytest.mark.parametrize("symmetric", [True, False])
def test_ansatz_outputs_valid_states(symmetric):
    ans = LayeredAnsatz(RydbergModel.two_rails(3), 2, rail_symmetric=symmetric)
    rng = np.random.default_rng(7)
    lo, hi = np.array(ans.bounds()).T
    rho_in = random_density(64, rng, rank=2)
    for _ in range(5):
        out = ans(rho_in, rng.uniform(lo, hi))
        assert abs(np.trace(out) - 1) < 1e-10
        assert np.allclose(out, out.conj().T)
        assert np.linalg.eigvalsh(out).min() > -1e-10


def test_ansatz_identity_at_zero():
    ans = LayeredAnsatz(RydbergModel.two_rails(3), 3, rail_symmetric=False)
    rho = random_density(64, np.random.default_rng(8))
    assert np.allclose(ans(rho, np.zeros(ans.n_params)), rho)
    assert ans.n_per_layer == 11
    assert LayeredAnsatz(RydbergModel.two_rails(3), 3).n_per_layer == 6


def test_symmetric_ansatz_keeps_rail_symmetry():
    # shared parameters cannot separate the rails: a rail-symmetric input
    # stays symmetric, while the conditional dynamics breaks the symmetry
    ans = LayeredAnsatz(RydbergModel.two_rails(3), 3, rail_symmetric=True)
    rng = np.random.default_rng(9)
    lo, hi = np.array(ans.bounds()).T
    rho = projector(ring_pair_state([0, 0, 0], [0, 0, 0]))
    out = ans(rho, rng.uniform(lo, hi))
    assert np.allclose(swap_rails(out, 3), out)
    gen = Generator.lindblad(build_classical_jumps(rule_from_number(137), 3))
    exact = integrate_density(gen, rho, [0.5])[0]
    assert not np.allclose(swap_rails(exact, 3), exact)


def test_params_wrap():
    ans = LayeredAnsatz(RydbergModel.two_rails(3), 1)
    p = ans.params([-1.0, 7.0, 0.5, 0.2, 0.1, 0.3]).wrapped()
    assert 0 <= p.values[0, 0] < 2 * np.pi and p.values[0, 1] == pytest.approx(7.0 - 2 * np.pi)
    assert p.to_lists()[0]["theta_d"] == 0.5


# --- optimizer --------------------------------------------------------------


def quad(a, x0):
    return lambda x: float((x - x0) @ a @ (x - x0))


def test_layerwise_quadratic():
    rng = np.random.default_rng(10)
    m = rng.normal(size=(6, 6))
    a = m @ m.T + 6 * np.eye(6)
    x0 = rng.uniform(-1, 1, 6)
    res = optimize_layerwise(quad(a, x0), np.zeros(6), [(-2, 2)] * 6, [slice(0, 3), slice(3, 6)], max_sweeps=200)
    assert res.converged
    assert np.abs(res.theta - x0).max() < 1e-6


def test_single_layer_equals_global():
    a = np.diag([1.0, 3.0, 2.0])
    x0 = np.array([0.3, -0.2, 0.5])
    whole = optimize_layerwise(quad(a, x0), np.zeros(3), [(-1, 1)] * 3)
    layered = optimize_layerwise(quad(a, x0), np.zeros(3), [(-1, 1)] * 3, [slice(0, 3)])
    assert np.array_equal(whole.theta, layered.theta)


def test_optimizer_bounds_and_warning():
    with pytest.raises(ValueError):
        optimize_layerwise(lambda x: float(x @ x), np.zeros(2), [(-np.inf, 1), (0, 1)])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = optimize_layerwise(
            lambda x: float(np.abs(x - 0.3).sum() + 1), np.zeros(2), [(-1, 1)] * 2,
            [slice(0, 1), slice(1, 2)], max_sweeps=1, rtol=-1.0,
        )
    assert not res.converged
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)


# --- fidelity ---------------------------------------------------------------


def test_fidelity_error_examples():
    rho = random_density(8, np.random.default_rng(11))
    assert fidelity_error(rho, rho) == pytest.approx(0.0, abs=1e-10)
    assert fidelity_error(projector([1, 0]), projector([0, 1])) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fidelity_error(np.diag([1.2, -0.2]), projector([1, 0]))


def test_fidelity_symmetric_and_unitarily_invariant():
    rng = np.random.default_rng(12)
    a, b = random_density(8, rng, rank=3), random_density(8, rng)
    u = unitary_group.rvs(8, random_state=13)
    e = fidelity_error(a, b)
    assert fidelity_error(b, a) == pytest.approx(e, abs=1e-10)
    assert fidelity_error(u @ a @ u.conj().T, u @ b @ u.conj().T) == pytest.approx(e, abs=1e-10)
    psi, phi = unitary_group.rvs(4, random_state=1)[:, :2].T
    assert fidelity_error(projector(psi), projector(phi)) == pytest.approx(1 - abs(np.vdot(psi, phi)) ** 2)


def test_ansatz_prefix_cache_matches_fresh_evaluation():
    ans = LayeredAnsatz(RydbergModel.two_rails(2), 3, rail_symmetric=False)
    rng = np.random.default_rng(4)
    rho = random_density(16, rng)
    theta = np.array(ans.bounds())[:, 1] * rng.random(ans.n_params)
    base = ans(rho, theta)
    for layer in (2, 1, 0):
        moved = theta.copy()
        moved[ans.layer_slices()[layer]] *= 0.5
        fresh = LayeredAnsatz(RydbergModel.two_rails(2), 3, rail_symmetric=False)
        assert np.allclose(ans(rho, moved), fresh(rho, moved), atol=1e-13)
    assert np.allclose(ans(rho, theta), base, atol=1e-13)
    other = random_density(16, rng)
    assert np.allclose(ans(other, theta), LayeredAnsatz(ans.model, 3, rail_symmetric=False)(other, theta))


def test_identity_starts_are_identity_circuits():
    for sym in (True, False):
        ans = LayeredAnsatz(RydbergModel.two_rails(2), 3, rail_symmetric=sym)
        rho = random_density(16, np.random.default_rng(5))
        starts = ans.identity_starts(np.random.default_rng(0), jitter=0.0)
        assert len(starts) == (2 if sym else 4)
        for theta in starts.values():
            assert np.allclose(ans(rho, theta), rho, atol=1e-12)
