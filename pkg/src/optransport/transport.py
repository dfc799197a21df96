"""Exact propagation and adiabatic transport of the reduced density matrix."""

from dataclasses import dataclass, field
import logging

import numpy as np

from . import perturb as pt
from .linalg import (
    adjoint_action,
    block_products,
    dagger,
    expm_antihermitian,
    expm_general,
    hermitian_part,
    antihermitian_part,
    nearest_unitary,
    partial_trace_outer,
    partial_trace_vector,
    pseudo_inverse,
)
from .spectral import Grid

log = logging.getLogger(__name__)

METHODS = ("exact", "alone", "strong", "weak0", "weak1", "weak2", "thermal", "crossing")


def output_indices(count, stride):
    if stride < 1 or (count - 1) % stride:
        raise ValueError(f"output stride {stride} must divide the {count - 1} grid steps")
    return np.arange(0, count, stride)


# ------------------------------------------------------------- exact dynamics


@dataclass
class ExactResult:
    s: np.ndarray
    states: np.ndarray
    norm_drift: float

    def reduced(self, dim_s, dim_e):
        return partial_trace_vector(self.states, dim_s, dim_e)


def _step_unitaries(h, tau):
    """exp(-i tau_k H_k) for a stack of Hermitian H."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * tau[:, None] * w)[:, None, :]) @ dagger(v)


def _magnus4_generators(family, s0, ds):
    """Fourth-order Magnus exponent (times i/T) from the two Gauss points of each step."""
    c = np.sqrt(3) / 6
    h1 = family.full(s0 + (0.5 - c) * ds)
    h2 = family.full(s0 + (0.5 + c) * ds)
    return h1, h2


def solve_schrodinger_exact(family, psi0, T, grid: Grid, stride=1, mode="midpoint", chunk_steps=20000, taylor_tol=1e-16):
    """Propagate i hbar/T psi' = H(s) psi on ``grid``; states are returned every ``stride`` steps.

    ``mode`` is ``midpoint`` (exp of -i T H(s_{k+1/2}) ds / hbar), ``strang``
    (split between the uncoupled part and eps V) or ``magnus4``. Dimensions
    above 16 use a Taylor series for the action of the midpoint exponential.
    """
    psi = np.array(psi0, dtype=complex)
    n0 = np.linalg.norm(psi)
    if abs(n0 - 1) > 1e-10:
        raise ValueError("initial state must be normalised")
    s = grid.points
    out = output_indices(s.size, stride)
    nsteps = s.size - 1
    states = np.empty((out.size, psi.size), dtype=complex)
    states[0] = psi
    hbar = family.hbar
    if family.dim > 16:
        if mode != "midpoint":
            raise ValueError("large dimensions support the midpoint rule only")
        return _taylor_propagate(family, psi, T, grid, stride, taylor_tol)
    chunk = max(stride, (chunk_steps // stride) * stride)
    j = 1
    for k0 in range(0, nsteps, chunk):
        k1 = min(nsteps, k0 + chunk)
        ds = np.diff(s[k0 : k1 + 1])
        tau = T * ds / hbar
        if mode == "midpoint":
            u = _step_unitaries(family.full(0.5 * (s[k0:k1] + s[k0 + 1 : k1 + 1])), tau)
        elif mode == "strang":
            mid = 0.5 * (s[k0:k1] + s[k0 + 1 : k1 + 1])
            bare = family.with_epsilon(0.0).full(mid)
            coup = family.epsilon * np.asarray(family.v(mid))
            half = _step_unitaries(bare, 0.5 * tau)
            u = half @ _step_unitaries(coup, tau) @ half
        elif mode == "magnus4":
            h1, h2 = _magnus4_generators(family, s[k0:k1], ds)
            dt = (T * ds / hbar)[:, None, None]
            comm = h2 @ h1 - h1 @ h2
            omega = 0.5 * dt * (h1 + h2) - 1j * (np.sqrt(3) / 12) * dt**2 * comm
            u = _step_unitaries(hermitian_part(omega), np.ones(k1 - k0))
        else:
            raise ValueError(f"unknown integrator {mode!r}")
        prods = block_products(u, stride)
        for p in prods:
            psi = p @ psi
            states[j] = psi
            j += 1
    drift = float(np.abs(np.linalg.norm(states, axis=1) - 1).max())
    return ExactResult(s[out], states, drift)


def _taylor_propagate(family, psi, T, grid, stride, tol, chunk=256):
    s = grid.points
    out = output_indices(s.size, stride)
    states = np.empty((out.size, psi.size), dtype=complex)
    states[0] = psi
    ds_, de = family.dim_s, family.dim_e
    structured = family.h_e_constant and family.v_constant
    if structured:
        h0 = np.kron(np.eye(ds_), np.asarray(family.h_e(0.0))[0]) + family.epsilon * np.asarray(family.v(0.0))[0]
    j = 1
    nsteps = s.size - 1
    for c0 in range(0, nsteps, chunk):
        c1 = min(nsteps, c0 + chunk)
        mid = 0.5 * (s[c0:c1] + s[c0 + 1 : c1 + 1])
        if structured:
            hs = np.asarray(family.h_s(mid))
        else:
            hfull = family.full(mid)
        for i, k in enumerate(range(c0, c1)):
            tau = T * (s[k + 1] - s[k]) / family.hbar
            if structured:
                m = hs[i]

                def act(x, m=m):
                    return h0 @ x + (m @ x.reshape(ds_, de)).ravel()

            else:
                m = hfull[i]

                def act(x, m=m):
                    return m @ x

            term = psi
            acc = psi.copy()
            order = 1
            while True:
                term = (-1j * tau / order) * act(term)
                acc += term
                if np.linalg.norm(term) <= tol or order > 60:
                    break
                order += 1
            psi = acc
            if (k + 1) % stride == 0:
                states[j] = psi
                j += 1
    drift = float(np.abs(np.linalg.norm(states, axis=1) - 1).max())
    return ExactResult(s[out], states, drift)


# ---------------------------------------------------- time-ordered exponentials


def step_factors(generators, ds, unitary=True):
    """exp(-A_k ds_k) for midpoint generators A_k."""
    a = np.asarray(generators) * np.asarray(ds)[:, None, None]
    return expm_antihermitian(-a) if unitary else expm_general(-a)


def ordered_series(steps, direction="forward", stride=1, unitary=False):
    """Cumulative time-ordered products at every ``stride`` step, starting from the identity.

    ``forward`` (Teg) multiplies new factors on the left, ``reverse`` (Ted) on
    the right. With ``unitary`` each partial product is projected back onto the
    unitary group so rounding does not accumulate over long grids.
    """
    if direction not in ("forward", "reverse"):
        raise ValueError("direction must be 'forward' or 'reverse'")
    fwd = direction == "forward"
    steps = np.asarray(steps)
    d = steps.shape[-1]
    blocks = block_products(steps, stride, forward=fwd)
    out = np.empty((blocks.shape[0] + 1, d, d), dtype=complex)
    cur = np.eye(d, dtype=complex)
    out[0] = cur
    for i, b in enumerate(blocks):
        cur = b @ cur if fwd else cur @ b
        if unitary:
            cur = nearest_unitary(cur)
        out[i + 1] = cur
    return out


def time_ordered_exp(generators, grid: Grid, direction="forward", stride=1, unitary=True):
    """Teg/Ted of -int A from generators sampled on the grid points (midpoint-averaged)."""
    a = np.asarray(generators)
    mid = 0.5 * (a[1:] + a[:-1])
    if unitary:
        mid = antihermitian_part(mid)
    return ordered_series(step_factors(mid, grid.steps, unitary), direction, stride, unitary)


def verify_splitting_corollary(a_fn, b_fn, grid: Grid):
    """max_s |X_num - (A + B - U_X A U_X^-1)| for U_X = U_{A+B} U_A^-1 (interior points)."""
    s = grid.points
    a = np.asarray(a_fn(s))
    b = np.asarray(b_fn(s))
    u_ab = time_ordered_exp(a + b, grid, "forward")
    u_a = time_ordered_exp(a, grid, "forward")
    u_x = u_ab @ dagger(u_a)
    du = np.gradient(u_x, s, axis=0, edge_order=2)
    inv = np.linalg.inv(u_x)
    x_num = -du @ inv
    x_formula = a + b - u_x @ a @ inv
    return float(np.abs(x_num - x_formula)[1:-1].max())


# ------------------------------------------------------------ trajectory data


@dataclass
class TrajectorySet:
    """Reduced density matrices per method on the output grid, plus observables."""

    s: np.ndarray
    observable_basis: np.ndarray
    rho: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def add(self, method, rho, **diag):
        self.rho[method] = np.asarray(rho)
        if diag:
            self.diagnostics.setdefault(method, {}).update(diag)

    def population(self, method):
        z0 = self.observable_basis[:, 0]
        return np.real(np.einsum("i,kij,j->k", z0.conj(), self.rho[method], z0))

    def coherence(self, method):
        z0, z1 = self.observable_basis[:, 0], self.observable_basis[:, 1]
        return np.abs(np.einsum("i,kij,j->k", z0.conj(), self.rho[method], z1))

    @property
    def methods(self):
        return tuple(self.rho)


def error_series(traj: TrajectorySet, method):
    """Absolute population and coherence errors against the exact trajectory."""
    if "exact" not in traj.rho:
        raise KeyError("error series needs the exact trajectory")
    ep = np.abs(traj.population(method) - traj.population("exact"))
    ec = np.abs(traj.coherence(method) - traj.coherence("exact"))
    return {"pop": ep, "coh": ec, "max_pop": float(ep.max()), "max_coh": float(ec.max())}


def projection_fidelity(psi, vectors):
    """||P psi||^2 for the projector on the span of orthonormal columns ``vectors``."""
    q = np.asarray(vectors)
    if q.ndim == 1:
        q = q[:, None]
    amp = dagger(q) @ np.asarray(psi)
    return float(np.real(np.vdot(amp, amp)))


# ------------------------------------------------------------ transport forms


def transport_alone(frame_s, a, idx=None):
    z = np.broadcast_to(frame_s.vectors, (frame_s.grid.count,) + frame_s.vectors.shape[1:])[:, :, a]
    if idx is not None:
        z = z[idx]
    return np.einsum("ki,kj->kij", z, z.conj())


def transport_strong(ctx, a, alpha, mode="first-order", family=None, idx=None):
    if mode == "first-order":
        rho = pt.density_first(ctx, a, alpha)
        return rho if idx is None else rho[idx]
    if mode == "exact":
        if family is None:
            raise ValueError("exact density eigenmatrix needs the Hamiltonian family")
        return pt.density_exact(ctx, family, a, alpha, idx)
    raise ValueError(f"unknown density mode {mode!r}")


def _ted_from_basis(basis, stride):
    """Ted of the geometric generator of an orthonormal moving basis.

    Each step factor Z_k Z_{k+1}^dagger is the exponential of the discrete
    generator -log(Z_k Z_{k+1}^dagger)/ds, so the product telescopes to
    Z(0) Z(s)^dagger.
    """
    steps = basis[:-1] @ dagger(basis[1:])
    return ordered_series(steps, "reverse", stride, unitary=True)


def geometric_generator(basis, s):
    """sum_bc <z_b|z_c'> |z_b><z_c| = Z Z^dagger Z' Z^dagger for columns Z (orthonormal case)."""
    der = np.gradient(basis, s, axis=0, edge_order=2)
    return basis @ dagger(basis) @ der @ dagger(basis)


def _teg_hermitian(e_ops, T, grid, hbar, stride):
    mid = hermitian_part(0.5 * (e_ops[1:] + e_ops[:-1]))
    gens = 1j * (T / hbar) * mid
    return ordered_series(step_factors(gens, grid.steps), "forward", stride, unitary=True)


@dataclass
class WeakGenerators:
    """Dynamical/geometric generators of one E sector and their ordered exponentials."""

    order: int
    alpha: int
    energy: np.ndarray
    geometric: np.ndarray
    teg: np.ndarray
    ted: np.ndarray
    basis: np.ndarray

    @property
    def propagator(self):
        return self.teg @ self.ted


def weak_generators(ctx, alpha, T, order=1, stride=1, a=0, eta2_phi_index="greek", zeta2_variant="as-printed", eta1_variant="complete", keep_eta_hermitian=False):
    """Build E_alpha^(k), A_alpha^(k) and their Teg/Ted series on the context grid."""
    grid = ctx.frame_s.grid
    hbar = ctx.hbar
    lam = pt.energies_first(ctx, alpha)
    if order == 0:
        z = np.array(ctx.zeta)
        e_ops = z @ (lam[:, :, None] * dagger(z))
        teg = _teg_hermitian(e_ops, T, grid, hbar, stride)
        ted = _ted_from_basis(z, stride)
        return WeakGenerators(0, alpha, e_ops, geometric_generator(z, ctx.s), teg, ted, z)
    if order == 1:
        z = pt.lowdin(pt.wb_basis_first(ctx, alpha))
        eta = pt.eta_first(ctx, alpha, eta1_variant)
        if not keep_eta_hermitian:
            eta = antihermitian_part(eta)
        inner = np.zeros_like(eta)
        idx = np.arange(ctx.dim_s)
        inner[:, idx, idx] = lam
        inner = inner - 1j * (hbar / T) * eta
        e_ops = z @ inner @ dagger(z)
        teg = _teg_hermitian(e_ops, T, grid, hbar, stride)
        ted = _ted_from_basis(z, stride)
        return WeakGenerators(1, alpha, e_ops, geometric_generator(z, ctx.s), teg, ted, z)
    if order == 2:
        return _weak_generators_second(ctx, alpha, T, stride, a, eta2_phi_index, zeta2_variant)
    raise ValueError("order must be 0, 1 or 2")


def energies_second(ctx, alpha):
    """lambda_{b alpha} through second order with shifted (Wigner-Brillouin) denominators."""
    lam = pt.energies_first(ctx, alpha).copy()
    eps = ctx.epsilon
    dl = ctx.delta(alpha)  # [k, b, d, g]
    v = ctx.block(alpha)  # [k, d, g, b] = V_{d g, b alpha}
    for b in range(ctx.dim_s):
        m = np.ones((ctx.dim_s, ctx.dim_e), bool)
        m[b, alpha] = False
        inv = pt._inv(ctx, dl[:, b], m[None], "energy")
        lam[:, b] += eps**2 * np.real(np.einsum("kdg,kdg->k", np.abs(v[:, :, :, b]) ** 2, inv))
    return lam


def _weak_generators_second(ctx, alpha, T, stride, a, phi_index, variant):
    grid = ctx.frame_s.grid
    hbar = ctx.hbar
    s = ctx.s
    z = pt.wb_basis_second(ctx, alpha, variant)
    zd = pt.wb_dual_basis_second(ctx, alpha, variant)
    lam = energies_second(ctx, alpha)
    eta = pt.eta_second(ctx, alpha, a=a, phi_index=phi_index)
    inner = -1j * (hbar / T) * eta
    idx = np.arange(ctx.dim_s)
    inner[:, idx, idx] += lam
    e_ops = z @ inner @ dagger(zd)
    der = np.gradient(z, s, axis=0, edge_order=2)
    conn = dagger(zd) @ der + pt.a2_extra(ctx, alpha)
    a_ops = z @ conn @ dagger(zd)
    gens_e = 1j * (T / hbar) * 0.5 * (e_ops[1:] + e_ops[:-1])
    teg = ordered_series(step_factors(gens_e, grid.steps, unitary=False), "forward", stride)
    a_mid = 0.5 * (a_ops[1:] + a_ops[:-1])
    ted = ordered_series(step_factors(a_mid, grid.steps, unitary=False), "reverse", stride)
    return WeakGenerators(2, alpha, e_ops, a_ops, teg, ted, z)


def _rho_base(ctx, a, alpha, density_mode, family, idx):
    return transport_strong(ctx, a, alpha, density_mode, family, idx)


def transport_weak(ctx, a, alpha, T, order=1, stride=1, density_mode="first-order", family=None, gens=None, **kw):
    """Weak-regime transport of rho_{a alpha}; returns (rho series, diagnostics)."""
    idx = output_indices(ctx.n, stride)
    if gens is None:
        gens = weak_generators(ctx, alpha, T, order, stride, a=a, **kw)
    u = gens.propagator
    if order < 2:
        base = _rho_base(ctx, a, alpha, density_mode, family, idx)
        return adjoint_action(u, base), {}
    rho2 = pt.density_second(ctx, a, alpha)[idx]
    if density_mode == "exact":
        exact = pt.density_exact(ctx, family, a, alpha, idx)
        rho2 = rho2 - pt.density_first(ctx, a, alpha)[idx] + exact
    out = u @ rho2 @ dagger(u)
    za = ctx.zeta[idx, :, a]
    pa = np.einsum("ki,kj->kij", za, za.conj())
    for dl_ in range(ctx.dim_e):
        if dl_ == alpha:
            continue
        w = pt.w_operator(ctx, dl_, alpha)[idx] @ u
        out = out + ctx.epsilon**2 * (w @ pa @ dagger(w))
    tr = np.trace(out, axis1=1, axis2=2)
    defect = float(np.abs(tr - 1).max())
    log.info("second-order transport trace defect before renormalisation: %.3e", defect)
    return out / tr[:, None, None], {"trace_defect": defect}


def boltzmann_weights(nu0, beta_inv):
    """Weights exp(-nu/kT)/Z; beta_inv = kT (0 means zero temperature, inf uniform)."""
    nu0 = np.asarray(nu0, dtype=float)
    if beta_inv == 0:
        w = (nu0 == nu0.min()).astype(float)
        return w / w.sum()
    if np.isinf(beta_inv):
        return np.full(nu0.size, 1.0 / nu0.size)
    with np.errstate(over="ignore"):  # tiny kT: -inf -> weight 0
        w = np.exp(-(nu0 - nu0.min()) / beta_inv)
    return w / w.sum()


def transport_thermal(ctx, a, T, beta_inv, stride=1, density_mode="first-order", family=None, weight_floor=0.0):
    weights = boltzmann_weights(ctx.nu[0], beta_inv)
    idx = output_indices(ctx.n, stride)
    out = np.zeros((idx.size, ctx.dim_s, ctx.dim_s), dtype=complex)
    for alpha, w in enumerate(weights):
        if w <= weight_floor:
            continue
        rho, _ = transport_weak(ctx, a, alpha, T, 1, stride, density_mode, family)
        out += w * rho
    return out, {"weights": weights}


def landau_zener_p(T, epsilon, v_elem, aleph, hbar=1.0):
    """p = exp(-2 pi T eps^2 |V|^2 / (hbar |aleph|))."""
    if aleph == 0:
        raise ValueError("crossing slope aleph must be nonzero")
    return float(np.exp(-2 * np.pi * T * epsilon**2 * abs(v_elem) ** 2 / (hbar * abs(aleph))))


def landau_zener_sweep(T, epsilon, v_elem, aleph, hbar=1.0, steps=200001, window=None):
    """Probability of a diabatic passage through a linear two-level crossing, by direct integration.

    The diabatic gap is aleph (s - 1/2) over s in [1/2 - w, 1/2 + w]. The run
    starts and ends in the instantaneous eigenvectors closest to diabatic
    state 0, which suppresses the finite-window oscillations.
    """
    coupling = epsilon * v_elem
    if window is None:
        width = max(abs(coupling), np.sqrt(hbar * abs(aleph) / T))
        window = 80 * width / abs(aleph)
    s = np.linspace(0.5 - window, 0.5 + window, steps)

    def ham(x):
        h = np.zeros((x.size, 2, 2), dtype=complex)
        h[:, 0, 0] = -0.5 * aleph * (x - 0.5)
        h[:, 1, 1] = 0.5 * aleph * (x - 0.5)
        h[:, 0, 1] = coupling
        h[:, 1, 0] = np.conj(coupling)
        return h

    def diabatic_like(x):
        _, v = np.linalg.eigh(ham(np.array([x]))[0])
        return v[:, np.argmax(np.abs(v[0]))]

    u = _step_unitaries(ham(0.5 * (s[1:] + s[:-1])), T * np.diff(s) / hbar)
    chunk = 2 ** int(np.log2(max(1, u.shape[0] // 64)))
    total = np.eye(2, dtype=complex)
    for k0 in range(0, u.shape[0], chunk):
        total = block_products(u[k0 : k0 + chunk], u[k0 : k0 + chunk].shape[0])[0] @ total
    psi = total @ diabatic_like(s[0])
    return float(abs(np.vdot(diabatic_like(s[-1]), psi)) ** 2)


def tau_first(ctx, a, alpha, beta):
    """First-order tau_{a alpha beta} = tr_E |phi_{a alpha}><phi_{a beta}|."""
    ds, eps = ctx.dim_s, ctx.epsilon
    mu, nu = ctx.mu, ctx.nu
    zeta = ctx.zeta
    out = np.zeros((ctx.n, ds, ds), dtype=complex)
    va = ctx.block(alpha)  # V_{d g, b alpha}
    shift_a = eps * ctx.diag(alpha)[:, a]
    shift_b = eps * ctx.diag(beta)[:, a]
    for d in range(ds):
        if d == a:
            continue
        den1 = ctx.check(mu[:, a] - mu[:, d] + nu[:, alpha] - nu[:, beta] + shift_a, "crossing")
        c1 = eps * va[:, d, beta, a] / den1  # V_{d beta, a alpha}
        den2 = ctx.check(mu[:, a] - mu[:, d] + nu[:, beta] - nu[:, alpha] + shift_b, "crossing")
        c2 = eps * va[:, a, beta, d] / den2  # V_{a beta, d alpha}
        zd, za = zeta[:, :, d], zeta[:, :, a]
        out += c1[:, None, None] * np.einsum("ki,kj->kij", zd, za.conj())
        out += c2[:, None, None] * np.einsum("ki,kj->kij", za, zd.conj())
    return out


def transport_crossing(ctx, a, alpha, beta, p, varphi, T, s_star, stride=1, offset_steps=5, density_mode="first-order", family=None):
    """Weak transport on branch alpha, switching to the four-term mixture after s_star.

    The switch happens ``offset_steps`` grid steps past ``s_star``.
    """
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    idx = output_indices(ctx.n, stride)
    ga = weak_generators(ctx, alpha, T, 1, stride)
    gb = weak_generators(ctx, beta, T, 1, stride)
    ua, ub = ga.propagator, gb.propagator
    ra = adjoint_action(ua, _rho_base(ctx, a, alpha, density_mode, family, idx))
    rb = adjoint_action(ub, _rho_base(ctx, a, beta, density_mode, family, idx))
    tau = tau_first(ctx, a, alpha, beta)[idx]
    cross = np.sqrt((1 - p) * p) * np.exp(1j * varphi) * (ua @ tau @ dagger(ub))
    mix = (1 - p) * ra + p * rb + cross + dagger(cross)
    k_switch = np.searchsorted(ctx.s, s_star) + offset_steps
    after = ctx.s[idx] >= ctx.s[min(k_switch, ctx.n - 1)]
    out = np.where(after[:, None, None], mix, ra)
    tr = np.trace(out, axis1=1, axis2=2)
    defect = float(np.abs(tr - 1).max())
    return out / tr[:, None, None], {"trace_defect": defect, "switch_s": float(ctx.s[min(k_switch, ctx.n - 1)])}


# ------------------------------------------------------ exact geometric phase


def _aligned_eigvecs(family, s, refs):
    """All full eigenvectors with maximal overlap with each column of ``refs``, phase aligned."""
    h = family.full(np.atleast_1d(s))[0]
    _, v = np.linalg.eigh(h)
    ov = dagger(refs) @ v
    j = np.argmax(np.abs(ov), axis=1)
    phi = v[:, j]
    o = ov[np.arange(j.size), j]
    return phi * (np.abs(o) / o)[None, :]


def geometric_generator_exact(ctx, family, a, alpha, k, h=1e-5, kernel_tol=1e-10):
    """A_alpha = tr_E(|P_alpha phi'_{a alpha}><phi_{a alpha}|) rho_{a alpha}^-1 at grid index k.

    Returns (A_alpha, rho_{a alpha}). The derivative uses central differences
    of phase-aligned exact eigenvectors.
    """
    ds, de = ctx.dim_s, ctx.dim_e
    s = ctx.s[k]

    def refs_at(x):
        # reference product vectors from the tracked frames, interpolated linearly
        zeta = _interp_frame(ctx.s, ctx.zeta, x)
        xi = _interp_frame(ctx.s, ctx.xi, x)
        return np.stack([np.kron(zeta[:, b], xi[:, alpha]) for b in range(ds)], axis=1)

    phis = _aligned_eigvecs(family, s, refs_at(s))
    phi_p = _aligned_eigvecs(family, s + h, refs_at(s + h))[:, a]
    phi_m = _aligned_eigvecs(family, s - h, refs_at(s - h))[:, a]
    dphi = (phi_p - phi_m) / (2 * h)
    proj = phis @ dagger(phis)
    phi = phis[:, a]
    rho = partial_trace_vector(phi, ds, de)
    m = partial_trace_outer(proj @ dphi, phi, ds, de)
    if np.linalg.matrix_rank(rho, tol=kernel_tol) == 0:
        raise np.linalg.LinAlgError("density eigenmatrix collapsed below the kernel tolerance")
    return m @ pseudo_inverse(rho, kernel_tol), rho


def _interp_frame(s_grid, vectors, x):
    k = int(np.clip(np.searchsorted(s_grid, x) - 1, 0, s_grid.size - 2))
    t = (x - s_grid[k]) / (s_grid[k + 1] - s_grid[k])
    return (1 - t) * vectors[k] + t * vectors[k + 1]
