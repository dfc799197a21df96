import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optransport import models
from optransport.linalg import dagger

s_values = st.floats(0.0, 1.0)


def herm_dev(h):
    return np.abs(h - dagger(h)).max()


@pytest.mark.parametrize("builder", [
    lambda: models.build_atomic_pair(models.AtomicPairParams.weak()),
    lambda: models.build_atomic_pair(models.AtomicPairParams.strong()),
    lambda: models.build_spin_chain(models.SpinChainParams.weak()),
    lambda: models.crossing_family(),
    lambda: models.random_family(3),
])
def test_components_hermitian_and_closed(builder):
    fam = builder()
    s = np.linspace(0, 1, 37)
    for part in (fam.h_s(s), fam.h_e(s), fam.v(s)):
        assert herm_dev(np.asarray(part)) < 1e-12
    assert fam.full(s).shape == (37, fam.dim, fam.dim)
    if fam.closed:
        assert np.abs(fam.full(np.array([0.0])) - fam.full(np.array([1.0]))).max() < 1e-12


def test_atomic_defaults():
    p = models.AtomicPairParams.weak()
    assert (p.omega_e, p.r_max, p.r_min, p.epsilon) == (0.5, 1.0, 0.02, 5e-4)
    assert (p.V0, p.V1, p.V2, p.V3) == (3.0, 1.5, 0.5, 2.5)
    q = models.AtomicPairParams.strong()
    assert (q.omega_e, q.r_min, q.epsilon) == (1.5, 0.5, 1.6e-2)


def test_atomic_initial_control():
    p = models.AtomicPairParams.weak()
    r, th, ph = models.atomic_controls(p, np.array([0.0]))
    assert r[0] == pytest.approx(p.r_max + (p.r_min - p.r_max) * np.exp(-6.25))
    assert th[0] == 0 and ph[0] == 0
    _, z = models.build_atomic_pair(p).analytic_s(np.array([0.0]))
    assert np.allclose(z[0, :, 0], [-1, 0])


@given(st.lists(s_values, min_size=1, max_size=20))
@settings(max_examples=25, deadline=None)
def test_atomic_analytic_eigenpairs(ss):
    fam = models.build_atomic_pair(models.AtomicPairParams.weak())
    s = np.array(ss)
    h = fam.h_s(s)
    mu, z = fam.analytic_s(s)
    assert np.abs(h @ z - z * mu[:, None, :]).max() < 1e-12
    assert np.abs(dagger(z) @ z - np.eye(2)).max() < 1e-12


def test_atomic_coupling_two_representations():
    p = models.AtomicPairParams.weak()
    perm = models.E_MAJOR_TO_S_MAJOR
    table = models.atomic_coupling_e_major(p)[np.ix_(perm, perm)]
    assert np.abs(table - models.atomic_coupling(p)).max() < 1e-14


@given(st.lists(s_values, min_size=1, max_size=10))
@settings(max_examples=15, deadline=None)
def test_chain_analytic_eigenpairs(ss):
    fam = models.build_spin_chain(models.SpinChainParams.weak())
    s = np.array(ss)
    mu, z = fam.analytic_s(s)
    assert np.abs(fam.h_s(s) @ z - z * mu[:, None, :]).max() < 1e-12
    nu, xi = fam.analytic_e(s[:1])
    he = fam.h_e(s[:1])[0]
    assert np.abs(he @ xi[0] - xi[0] * nu[0]).max() < 1e-12
    assert np.abs(dagger(xi[0]) @ xi[0] - np.eye(fam.dim_e)).max() < 1e-12


def test_chain_dimensions_and_labels():
    fam = models.build_spin_chain(models.SpinChainParams.weak())
    assert fam.dim == 128
    k = models.chain_label_index(fam, "(000)", "(000)")
    assert fam.labels_e[k] == "(000)|(000)"
    with pytest.raises(ValueError):
        models.SpinChainParams(N=5)


def test_label_vector_parses_superpositions():
    v = models.label_vector("(001)-(010)")
    ref = np.zeros(8)
    ref[1], ref[2] = 1, -1
    assert np.allclose(v, ref / np.sqrt(2))


def test_atomic_rejects_bad_rmin():
    with pytest.raises(ValueError):
        models.AtomicPairParams(r_min=0.0)


def test_with_epsilon_scales_coupling():
    fam = models.random_family(1, epsilon=1e-2)
    s = np.array([0.3])
    d = fam.with_epsilon(2e-2).full(s) - fam.full(s)
    assert np.abs(d - 1e-2 * fam.v(s)).max() < 1e-14


def test_crossing_model_levels():
    fam = models.crossing_family(aleph=2.0, s_star=0.4)
    nu, _ = fam.analytic_e(np.array([0.4, 0.9]))
    assert nu[0, 1] - nu[0, 0] == pytest.approx(0.0)
    assert nu[1, 1] - nu[1, 0] == pytest.approx(2.0 * 0.5)
    assert fam.info["v_cross"].shape == (2,)
