import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optransport import models, perturb as pt, transport as tr, verification
from optransport.linalg import check_density, dagger, expm_antihermitian
from optransport.models import SX, SZ
from optransport.spectral import Grid


def qubit_family(h):
    return models.build_family(h, np.zeros((1, 1)), np.zeros((2, 2)), 0.0)


def test_constant_hamiltonian_closed_form():
    fam = qubit_family(SZ)
    psi0 = np.array([1.0, 1.0j]) / np.sqrt(2)
    res = tr.solve_schrodinger_exact(fam, psi0, np.pi, Grid.uniform(1001), stride=1000)
    ref = np.exp(-1j * np.pi * np.diag(SZ)) * psi0
    assert np.abs(res.states[-1] - ref).max() < 1e-10
    assert res.norm_drift < 1e-12


@pytest.mark.parametrize("mode,order", [("midpoint", 2), ("strang", 2), ("magnus4", 4)])
def test_integrator_convergence_order(mode, order):
    fam = models.random_family(5, epsilon=0.2)
    psi0 = np.zeros(fam.dim, complex)
    psi0[0] = 1
    finals = [tr.solve_schrodinger_exact(fam, psi0, 20.0, Grid.uniform(n), n - 1, mode).states[-1] for n in (201, 401, 801, 3201)]
    e1, e2 = (np.linalg.norm(finals[i] - finals[-1]) for i in (0, 1))
    assert np.log2(e1 / e2) == pytest.approx(order, abs=0.35)


def test_large_dimension_taylor_path_matches_dense():
    fam = models.random_family(2, dim_s=3, dim_e=6, epsilon=0.1)
    assert fam.dim > 16
    psi0 = np.ones(fam.dim, complex) / np.sqrt(fam.dim)
    g = Grid.uniform(401)
    big = tr.solve_schrodinger_exact(fam, psi0, 5.0, g, 400)
    h = fam.full(0.5 * (g.points[1:] + g.points[:-1]))
    psi = psi0
    for k in range(400):
        psi = tr._step_unitaries(h[k : k + 1], np.array([5.0 * g.steps[k]]))[0] @ psi
    assert np.abs(big.states[-1] - psi).max() < 1e-10


def test_commuting_ordered_exponential():
    g = Grid.uniform(2001)
    f = np.cos(3 * g.points) + g.points**2
    gens = f[:, None, None] * (1j * SX)[None]
    u = tr.time_ordered_exp(gens, g, "forward")
    integral = np.sin(3.0) / 3 + 1 / 3
    assert np.abs(u[-1] - expm_antihermitian(-1j * integral * SX)).max() < 1e-6  # trapezoid-rule level


def test_ordered_directions_are_inverse_related():
    a_fn, _ = verification.random_antihermitian_pair(3)
    g = Grid.uniform(501)
    gens = a_fn(g.points)
    teg = tr.time_ordered_exp(gens, g, "forward")
    ted = tr.time_ordered_exp(-gens, g, "reverse")
    assert np.abs(ted @ teg - np.eye(3)).max() < 1e-12


def test_output_indices_validation():
    assert list(tr.output_indices(11, 5)) == [0, 5, 10]
    with pytest.raises(ValueError):
        tr.output_indices(11, 3)


def test_splitting_corollary_second_order():
    res = verification.corollary_refinement(counts=(101, 201, 401, 801))
    assert res["slope"] == pytest.approx(2.0, abs=0.3)


def test_weak_transport_invariants(atomic_weak):
    fam, ctx = atomic_weak
    for order in (0, 1, 2):
        rho, diag = tr.transport_weak(ctx, 0, 0, 200.0, order, 10)
        ok, info = check_density(rho, 1e-9, 1e-9, np.inf)
        assert ok, (order, info)


def test_weak_propagator_unitary(atomic_weak):
    _, ctx = atomic_weak
    u = tr.weak_generators(ctx, 0, 200.0, 1, 10).propagator
    assert np.abs(dagger(u) @ u - np.eye(2)).max() < 1e-12


def test_gauge_swap_invariance():
    fam = models.build_atomic_pair(models.AtomicPairParams.weak())
    for v in verification.gauge_swap(fam, 200.0, count=4001, stride=10).values():
        assert v <= 1e-8


def test_strong_exact_mode_positive(atomic_strong):
    fam, ctx = atomic_strong
    idx = tr.output_indices(ctx.n, 100)
    rho = tr.transport_strong(ctx, 0, 0, "exact", fam, idx)
    ok, info = check_density(rho, 1e-12, 1e-10, 1e-10)
    assert ok, info
    with pytest.raises(ValueError):
        tr.transport_strong(ctx, 0, 0, "exact")


def test_first_order_negativity_is_second_order():
    # the truncated eigenmatrix has one eigenvalue of size -O(eps^2)
    neg = []
    for eps in (4e-3, 2e-3, 1e-3):
        _, ctx = verification.random_context(1, eps, count=5)
        neg.append(check_density(pt.density_first(ctx, 0, 0))[1]["negativity"])
    assert verification.slope((4e-3, 2e-3, 1e-3), neg) == pytest.approx(2.0, abs=0.2)


@given(st.floats(0.0, 50.0))
@settings(max_examples=20, deadline=None)
def test_boltzmann_weights(beta_inv):
    nu = np.array([0.0, 0.5, 1.5, 0.5])
    w = tr.boltzmann_weights(nu, beta_inv)
    assert w.sum() == pytest.approx(1.0)
    assert np.all(np.diff(w[[0, 1, 2]]) <= 1e-15)
    assert w[1] == pytest.approx(w[3])


def test_boltzmann_limits():
    nu = np.array([0.2, 0.0, 1.0])
    assert np.allclose(tr.boltzmann_weights(nu, 0), [0, 1, 0])
    assert np.allclose(tr.boltzmann_weights(nu, np.inf), 1 / 3)


def test_thermal_zero_temperature_is_ground_branch(atomic_weak):
    _, ctx = atomic_weak
    th, _ = tr.transport_thermal(ctx, 0, 200.0, 0.0, 10)
    w1, _ = tr.transport_weak(ctx, 0, 0, 200.0, 1, 10)
    assert np.abs(th - w1).max() < 1e-14


def test_landau_zener_formula_values():
    assert tr.landau_zener_p(100, 1e-2, 1.0, 1.0) == pytest.approx(np.exp(-2 * np.pi * 1e-2), rel=1e-14)
    assert tr.landau_zener_p(100, 0.0, 1.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        tr.landau_zener_p(1, 1, 1, 0)


@given(st.floats(10, 1e3), st.floats(1e-3, 5e-2), st.floats(0.1, 2.0), st.floats(0.5, 5.0))
@settings(max_examples=30, deadline=None)
def test_landau_zener_exponent_linear(T, eps, v, aleph):
    p = tr.landau_zener_p(T, eps, v, aleph)
    assert -np.log(p) == pytest.approx(2 * np.pi * T * eps**2 * v**2 / aleph, rel=1e-12)
    assert tr.landau_zener_p(2 * T, eps, v, aleph) == pytest.approx(p**2, rel=1e-12)


@pytest.mark.parametrize("T,eps,v,aleph", [(100, 1e-2, 1.0, 1.0), (50, 2e-2, 0.7, 2.0)])
def test_landau_zener_sweep_matches_formula(T, eps, v, aleph):
    assert tr.landau_zener_sweep(T, eps, v, aleph) == pytest.approx(tr.landau_zener_p(T, eps, v, aleph), abs=1e-5)


@pytest.fixture(scope="module")
def crossing_ctx():
    fam = models.crossing_family()
    return fam, verification.model_context(fam, Grid.uniform(4001))


@pytest.mark.parametrize("p", [0.0, 0.3, 0.5, 1.0])
def test_crossing_mixture_trace_and_purity(crossing_ctx, p):
    fam, ctx = crossing_ctx
    rho, diag = tr.transport_crossing(ctx, 0, 0, 1, p, 0.4, 100.0, fam.info["s_star"], 10, density_mode="exact", family=fam)
    assert diag["trace_defect"] < 1e-10
    purity = np.real(np.trace(rho @ rho, axis1=1, axis2=2))
    assert purity.max() <= 1 + 1e-10


def test_crossing_rejects_bad_p(crossing_ctx):
    fam, ctx = crossing_ctx
    with pytest.raises(ValueError):
        tr.transport_crossing(ctx, 0, 0, 1, 1.5, 0.0, 100.0, 0.5)


def test_trajectory_errors_need_exact():
    traj = tr.TrajectorySet(np.array([0.0]), np.eye(2))
    traj.add("alone", np.eye(2)[None] * 0.5)
    with pytest.raises(KeyError):
        tr.error_series(traj, "alone")
