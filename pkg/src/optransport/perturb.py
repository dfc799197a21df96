"""Perturbative eigen-objects of H = H_S + H_E + eps V in the product eigenbasis.

Notation: S labels are latin (a, b, c, d, e, f, k), E labels greek. The
coupling elements are ``V[c, g, b, beta] = <zeta_c (x) xi_g | V | zeta_b (x) xi_beta>``.
Every function is vectorised over the grid axis (leading axis of the outputs).
Corrected S vectors are returned as component vectors in the computational
basis of H_S; duals are returned as kets whose bra is the dual covector.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .linalg import dagger, hermitian_eigen, partial_trace_vector
from .spectral import EigenFrame, berry_connection, frame_derivative

DENOMINATOR_FLOOR = 1e-12
ETA2_PHI_INDEX = ("greek", "as-printed")
ZETA2_VARIANTS = ("as-printed", "complete")
RS2_VARIANTS = ("standard", "as-printed")
ETA1_VARIANTS = ("complete", "as-printed")


class DenominatorError(ZeroDivisionError):
    def __init__(self, what, s):
        super().__init__(f"vanishing {what} denominator at s={s:.12g}")
        self.s = float(s)


@dataclass
class PerturbationContext:
    """Coupling elements and energies of the unperturbed product basis on a grid.

    ``v_op`` is either a constant matrix or a callable on reduced times.
    """

    frame_s: EigenFrame
    frame_e: EigenFrame
    v_op: object
    epsilon: float
    hbar: float = 1.0
    max_full_dim: int = 64
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def s(self):
        return self.frame_s.grid.points

    @property
    def n(self):
        return self.s.size

    @property
    def dim_s(self):
        return self.frame_s.dim

    @property
    def dim_e(self):
        return self.frame_e.dim

    @cached_property
    def mu(self):
        return np.broadcast_to(self.frame_s.values, (self.n, self.dim_s))

    @cached_property
    def nu(self):
        return np.broadcast_to(self.frame_e.values, (self.n, self.dim_e))

    @cached_property
    def zeta(self):
        return np.broadcast_to(self.frame_s.vectors, (self.n, self.dim_s, self.dim_s))

    @cached_property
    def xi(self):
        return np.broadcast_to(self.frame_e.vectors, (self.n, self.dim_e, self.dim_e))

    @cached_property
    def zeta_prime(self):
        return np.broadcast_to(frame_derivative(self.frame_s), self.zeta.shape)

    @cached_property
    def berry_s(self):
        """<zeta_b|zeta_c'> per point."""
        return np.broadcast_to(berry_connection(self.frame_s), (self.n, self.dim_s, self.dim_s))

    @cached_property
    def berry_e(self):
        """<xi_g|xi_d'> per point (zero for a constant E frame)."""
        if self.frame_e.constant:
            return np.broadcast_to(np.zeros((1, self.dim_e, self.dim_e), dtype=complex), (self.n, self.dim_e, self.dim_e))
        return berry_connection(self.frame_e)

    def _v_stack(self, idx=None):
        s = self.s if idx is None else self.s[idx]
        if callable(self.v_op):
            return np.asarray(self.v_op(s))
        return np.broadcast_to(np.asarray(self.v_op), (s.size,) + np.shape(self.v_op))

    @cached_property
    def _v_e_constant(self):
        """V with the E factor already rotated into the (constant) E frame."""
        ds, de = self.dim_s, self.dim_e
        xi = self.frame_e.vectors[0]
        v = np.asarray(self.v_op).reshape(ds, de, ds, de)
        return np.einsum("eg,iejf,fb->igjb", xi.conj(), v, xi)

    @property
    def _fast_blocks(self):
        return self.frame_e.constant and not callable(self.v_op)

    @cached_property
    def elements(self):
        """Full element array V[k, c, g, b, beta]."""
        ds, de = self.dim_s, self.dim_e
        if ds * de > self.max_full_dim:
            raise MemoryError(
                f"full element array for dimension {ds * de} disabled; use block()"
            )
        if self._fast_blocks:
            w = self._v_e_constant
            return np.einsum("kic,igjb,kjd->kcgdb", self.zeta.conj(), w, self.zeta)
        out = np.empty((self.n, ds, de, ds, de), dtype=complex)
        step = 2048
        for lo in range(0, self.n, step):
            sl = slice(lo, lo + step)
            basis = np.einsum("kib,kjg->kijbg", self.zeta[sl], self.xi[sl]).reshape(-1, ds * de, ds * de)
            m = dagger(basis) @ self._v_stack(np.arange(self.n)[sl]) @ basis
            out[sl] = m.reshape(-1, ds, de, ds, de)
        return out

    def block(self, alpha):
        """V[k, c, g, b] = V_{c g, b alpha}."""
        key = ("block", alpha)
        if key not in self._cache:
            if self._fast_blocks:
                w = self._v_e_constant[:, :, :, alpha]
                self._cache[key] = np.einsum("kic,igj,kjb->kcgb", self.zeta.conj(), w, self.zeta)
            else:
                self._cache[key] = self.elements[..., alpha]
        return self._cache[key]

    def diag(self, alpha):
        """V_{b alpha, b alpha} for every b."""
        blk = self.block(alpha)
        return np.real(np.einsum("kbb->kb", blk[:, :, alpha, :]))

    def delta(self, alpha):
        """Wigner-Brillouin denominators D[k, c, d, delta] = mu_c - mu_d + nu_alpha - nu_delta + eps V_{c alpha, c alpha}."""
        key = ("delta", alpha)
        if key not in self._cache:
            mu, nu = self.mu, self.nu
            shift = self.epsilon * self.diag(alpha)
            d = (
                (mu + shift)[:, :, None, None]
                - mu[:, None, :, None]
                + (nu[:, alpha])[:, None, None, None]
                - nu[:, None, None, :]
            )
            self._cache[key] = d
        return self._cache[key]

    def check(self, den, what, mask=None):
        bad = np.abs(den) < DENOMINATOR_FLOOR
        if mask is not None:
            bad &= mask
        if np.any(bad):
            k = np.argwhere(bad)[0][0]
            raise DenominatorError(what, self.s[k])
        return den


def _inv(ctx, den, mask, what):
    """1/den where mask holds, 0 elsewhere, with the vanishing-denominator guard."""
    mask = np.broadcast_to(mask, den.shape)
    ctx.check(den, what, mask)
    safe = np.where(mask, den, 1.0)
    return np.where(mask, 1.0 / safe, 0.0)


def _off(n):
    return ~np.eye(n, dtype=bool)


# ----------------------------------------------------------- first order, RS


def rs_energy_first(ctx, b, beta):
    return ctx.mu[:, b] + ctx.nu[:, beta] + ctx.epsilon * ctx.diag(beta)[:, b]


def energies_first(ctx, alpha):
    """lambda_{b alpha} for all b, shape (n, dim_s)."""
    return ctx.mu + ctx.nu[:, alpha][:, None] + ctx.epsilon * ctx.diag(alpha)


def _product_basis(ctx):
    return np.einsum("kib,kjg->kijbg", ctx.zeta, ctx.xi).reshape(
        ctx.n, ctx.dim_s * ctx.dim_e, ctx.dim_s * ctx.dim_e
    )


def rs_coefficients_first(ctx, b, beta):
    """Coefficients c[k, c, g] of the first-order Rayleigh-Schroedinger vector."""
    blk = ctx.block(beta)[:, :, :, b]  # V_{c g, b beta}
    den = (
        ctx.mu[:, b][:, None, None]
        - ctx.mu[:, :, None]
        + ctx.nu[:, beta][:, None, None]
        - ctx.nu[:, None, :]
    )
    mask = np.ones((ctx.dim_s, ctx.dim_e), bool)
    mask[b, beta] = False
    coef = ctx.epsilon * blk * _inv(ctx, den, mask, "Rayleigh-Schroedinger")
    coef[:, b, beta] = 1.0
    return coef


def rs_vector_first(ctx, b, beta):
    """phi_{b beta} to first order, as full-space component vectors (n, dim)."""
    coef = rs_coefficients_first(ctx, b, beta)
    return np.einsum("kic,kjg,kcg->kij", ctx.zeta, ctx.xi, coef).reshape(ctx.n, -1)


# ----------------------------------------------------------- second order, RS


def _flat(ctx):
    ds, de = ctx.dim_s, ctx.dim_e
    v = ctx.elements.reshape(ctx.n, ds * de, ds * de)
    e0 = (ctx.mu[:, :, None] + ctx.nu[:, None, :]).reshape(ctx.n, ds * de)
    return v, e0


def rs_coefficients_second(ctx, b, beta, variant="standard"):
    """Intermediate-normalised second-order coefficients over the product basis (n, dim).

    ``standard`` is textbook Rayleigh-Schroedinger; ``as-printed`` carries the
    diagonal-shift term inside the double sum.
    """
    if variant not in RS2_VARIANTS:
        raise ValueError(f"variant must be one of {RS2_VARIANTS}")
    v, e0 = _flat(ctx)
    j = b * ctx.dim_e + beta
    dim = v.shape[-1]
    eps = ctx.epsilon
    den = e0[:, j][:, None] - e0  # E_j - E_i
    off = np.arange(dim) != j
    inv = _inv(ctx, den, off[None, :], "Rayleigh-Schroedinger")
    first = v[:, :, j] * inv
    vjj = v[:, j, j]
    if variant == "standard":
        second = np.einsum("kmi,ki->km", v, first) * inv - vjj[:, None] * first * inv
    else:
        tot = np.einsum("kmi,ki->km", v, first) - vjj[:, None] * first.sum(axis=1)[:, None]
        second = tot * inv
    coef = eps * first + eps**2 * second
    coef[:, j] = 1.0
    return coef


def rs_vector_second(ctx, b, beta, variant="standard"):
    coef = rs_coefficients_second(ctx, b, beta, variant)
    return np.einsum("kij,kj->ki", _product_basis(ctx), coef)


def x_matrix(ctx):
    """Second-order biorthonormalisation matrix X[k, J, K] over flattened (b beta) labels."""
    v, e0 = _flat(ctx)
    dim = v.shape[-1]
    off = _off(dim)
    # gap[k, i, j] = E_i - E_j
    gap = e0[:, :, None] - e0[:, None, :]
    inv = _inv(ctx, gap, off[None], "biorthonormal")
    vd = np.einsum("kii->ki", v)
    # term1: sum_{L != K} (V_JL V_LK - V_LK V_KK) / ((E_K - E_J)(E_K - E_L)), J != K
    t1 = (
        np.einsum("kjl,klm,kml->kjm", v, v, inv)
        - (np.einsum("klm,kml->km", v, inv) * vd)[:, None, :]
    ) * inv.transpose(0, 2, 1)
    # term2: sum_{L != J} (V_LK V_JL - V_JL V_JJ) / ((E_J - E_K)(E_J - E_L)), J != K
    t2 = (
        np.einsum("klm,kjl,kjl->kjm", v, v, inv)
        - (np.einsum("kjl,kjl->kj", v, inv) * vd)[:, :, None]
    ) * inv
    # term3: sum_{L != J, L != K} V_LK V_JL / ((E_K - E_L)(E_J - E_L))
    t3 = np.einsum("klm,kjl,kml,kjl->kjm", v, v, inv, inv)
    return t1 + t2 + t3


def biorth_dual_full(ctx, b, beta, variant="standard"):
    """Ket whose bra is <<phi*_{b beta}| = <<phi_{b beta}| - eps^2 sum X_{b beta, c g} <<zeta_c xi_g|."""
    j = b * ctx.dim_e + beta
    phi = rs_vector_second(ctx, b, beta, variant)
    x = x_matrix(ctx)[:, j, :]
    basis = _product_basis(ctx)
    return phi - ctx.epsilon**2 * np.einsum("kij,kj->ki", basis, x.conj())


# ----------------------------------------------------- Wigner-Brillouin, S side


def wb_coefficients_first(ctx, alpha):
    """C[k, d, b]: component of zeta^(1)_{b alpha} along zeta_d."""
    blk = ctx.block(alpha)[:, :, alpha, :]  # V_{d alpha, b alpha}
    d = ctx.delta(alpha)[:, :, :, alpha]  # Delta_{b alpha, d alpha} at [k, b, d]
    inv = _inv(ctx, d, _off(ctx.dim_s)[None], "Wigner-Brillouin")
    coef = ctx.epsilon * blk * inv.transpose(0, 2, 1)
    idx = np.arange(ctx.dim_s)
    coef[:, idx, idx] = 1.0
    return coef


def wb_basis_first(ctx, alpha):
    """Columns zeta^(1)_{b alpha} (not normalised)."""
    return ctx.zeta @ wb_coefficients_first(ctx, alpha)


def wb_vector_first(ctx, b, alpha):
    return wb_basis_first(ctx, alpha)[:, :, b]


def lowdin(basis):
    """Symmetric orthonormalisation of the columns: B (B^dagger B)^{-1/2}."""
    g = dagger(basis) @ basis
    w, u = np.linalg.eigh(g)
    return basis @ (u * (1.0 / np.sqrt(w))[..., None, :]) @ dagger(u)


def wb_coefficients_second(ctx, alpha, variant="as-printed"):
    """C[k, d, b]: component of zeta^(2)_{b alpha} along zeta_d.

    ``as-printed`` follows the published double sum; ``complete`` is the
    Brillouin-Wigner second order with intermediates in every E sector.
    """
    if variant not in ZETA2_VARIANTS:
        raise ValueError(f"variant must be one of {ZETA2_VARIANTS}")
    ds, de, eps = ctx.dim_s, ctx.dim_e, ctx.epsilon
    va = ctx.block(alpha)  # [k, c, g, b] = V_{c g, b alpha}
    dl = ctx.delta(alpha)  # [k, c, d, delta]
    vaa = va[:, :, alpha, :]  # V_{d alpha, b alpha}
    off = _off(ds)
    inv = _inv(ctx, dl[..., alpha], off[None], "Wigner-Brillouin")  # 1/Delta_{b alpha, d alpha} at [k,b,d]
    first = vaa * inv.transpose(0, 2, 1)  # [k, d, b], zero on diagonal
    vbb = ctx.diag(alpha)
    if variant == "as-printed":
        # sum_{d!=b, e!=b} (V_{d e} V_{e b} - V_{e b} V_{b b}) / (Delta_{bd} Delta_{be})
        s1 = np.einsum("kde,keb->kdb", vaa, first) * inv.transpose(0, 2, 1)
        s1 -= np.einsum("keb->kb", first)[:, None, :] * vbb[:, None, :] * inv.transpose(0, 2, 1)
        # restrict e != b: the e=b slice of ``first`` is already zero
        second = s1
    else:
        vall = ctx.elements  # [k, d, g, e, h]
        second = np.zeros_like(first)
        for b in range(ds):
            m = np.ones((ds, de), bool)
            m[b, alpha] = False
            invg = _inv(ctx, dl[:, b, :, :], m[None], "Wigner-Brillouin")  # 1/Delta_{b alpha, e g}
            vb = va[:, :, :, b] * invg
            tot = np.einsum("kdeg,keg->kd", vall[:, :, alpha, :, :], vb)
            second[:, :, b] = tot * inv[:, b, :]
    coef = eps * first + eps**2 * second
    idx = np.arange(ds)
    coef[:, idx, idx] = 1.0
    return coef


def wb_basis_second(ctx, alpha, variant="as-printed"):
    return ctx.zeta @ wb_coefficients_second(ctx, alpha, variant)


def wb_dual_coefficients_second(ctx, alpha, variant="as-printed"):
    """R[k, c, e]: the dual <zeta*^(2)_{c alpha}| = sum_e R[c, e] <zeta_e|."""
    ds, de, eps = ctx.dim_s, ctx.dim_e, ctx.epsilon
    if variant == "complete":
        coef = wb_coefficients_second(ctx, alpha, "complete")
        return np.linalg.inv(coef)
    va = ctx.block(alpha)
    dl = ctx.delta(alpha)
    vaa = va[:, :, alpha, :]  # [k, x, y] = V_{x alpha, y alpha}
    vd = ctx.diag(alpha)
    off = _off(ds)
    ia = _inv(ctx, dl[..., alpha], off[None], "Wigner-Brillouin")  # [k, c, f] = 1/Delta_{c alpha, f alpha}
    r = np.zeros((ctx.n, ds, ds), dtype=complex)
    idx = np.arange(ds)
    r[:, idx, idx] = 1.0
    # + eps sum_{f != c} V_{c f}/Delta_{c f} <f|
    r += eps * vaa * ia
    sec = np.zeros_like(r)
    # + sum_{d!=c, e!=c} (V_{e d} V_{c e} - V_{c e} V_{c c}) / (Delta_{c d} Delta_{c e}) <d|
    ce = vaa * ia  # [k, c, e] = V_{c e}/Delta_{c e}, zero at e = c
    sec += (np.einsum("kce,ked->kcd", ce, vaa) - ce.sum(axis=2)[:, :, None] * vd[:, :, None]) * ia
    # - sum_{e, k!=e} (V_{c k} V_{k e} - V_{k e} V_{e e})(1 - d_ce) / (Delta_{e c} Delta_{e k}) <e|
    ek = vaa.transpose(0, 2, 1) * ia  # [k, e, kk] = V_{kk e}/Delta_{e kk}
    t4 = np.einsum("kcm,kem->kce", vaa, ek) - (ek.sum(axis=2) * vd)[:, None, :]
    sec -= t4 * ia.transpose(0, 2, 1)
    # - sum_{e, k!=c} (V_{k e} V_{c k} - V_{c k} V_{c c})(1 - d_ce) / (Delta_{c e} Delta_{c k}) <e|
    t5 = np.einsum("kcm,kme->kce", ce, vaa) - (ce.sum(axis=2) * vd)[:, :, None]
    sec -= t5 * ia
    # - sum_{e, k!=c, g!=alpha} V_{k g, e alpha} V_{c alpha, k g}(1 - d_ke) / (Delta_{e alpha, k g} Delta_{c alpha, k g}) <e|
    for g in range(de):
        if g == alpha:
            continue
        vg = va[:, :, g, :]  # [k, kk, e] = V_{kk g, e alpha}
        # 1/Delta_{x alpha, kk g} with kk != x covers both k != e and k != c
        inv_g = _inv(ctx, dl[:, :, :, g], off[None], "Wigner-Brillouin")
        sec -= np.einsum("kme,kem,kmc,kcm->kce", vg, inv_g, vg.conj(), inv_g)
    r += eps**2 * sec
    return r


def wb_dual_second(ctx, c, alpha, variant="as-printed"):
    """Ket whose bra is <zeta*^(2)_{c alpha}|."""
    r = wb_dual_coefficients_second(ctx, alpha, variant)
    return np.einsum("kie,ke->ki", ctx.zeta, r[:, c, :].conj())


def wb_dual_basis_second(ctx, alpha, variant="as-printed"):
    """Columns are the kets of the duals."""
    r = wb_dual_coefficients_second(ctx, alpha, variant)
    return ctx.zeta @ dagger(r)


# ------------------------------------------------------------------ eta terms


def eta_first(ctx, alpha, variant="complete"):
    """First-order E-side connection matrix eta^(1)[k, b, c].

    ``as-printed`` keeps only b != c in the coupling sums. ``complete`` also
    keeps the diagonal, which comes from the d = c, gamma != alpha components of
    the first-order eigenvector and is needed for O(eps^2) agreement with the
    exact generator when the E frame moves.
    """
    if variant not in ETA1_VARIANTS:
        raise ValueError(f"variant must be one of {ETA1_VARIANTS}")
    ds, de, eps = ctx.dim_s, ctx.dim_e, ctx.epsilon
    be = ctx.berry_e
    eye = np.eye(ds)
    out = be[:, alpha, alpha][:, None, None] * eye
    if ctx.frame_e.constant or eps == 0:
        return out
    va = ctx.block(alpha)  # V_{b g, c alpha} at [k, b, g, c]
    off = _off(ds) if variant == "as-printed" else np.ones((ds, ds), bool)
    mu, nu = ctx.mu, ctx.nu
    vdiag = ctx.diag(alpha)
    for g in range(de):
        if g == alpha:
            continue
        # V_{b g, c alpha} <xi_alpha|xi_g'> / (mu_c - mu_b + nu_alpha - nu_g + eps V_{c alpha, c alpha})
        den1 = (mu + eps * vdiag)[:, None, :] - mu[:, :, None] + (nu[:, alpha] - nu[:, g])[:, None, None]
        t1 = va[:, :, g, :] * be[:, alpha, g][:, None, None] * _inv(ctx, den1, off[None], "eta")
        # V_{b alpha, c g} <xi_g|xi_alpha'> / (mu_b - mu_c + nu_alpha - nu_g + eps V_{b alpha, b alpha})
        den2 = (mu + eps * vdiag)[:, :, None] - mu[:, None, :] + (nu[:, alpha] - nu[:, g])[:, None, None]
        t2 = _v_b_alpha_c_g(ctx, alpha, g) * be[:, g, alpha][:, None, None] * _inv(ctx, den2, off[None], "eta")
        out = out + eps * (t1 + t2)
    return out


def _v_b_alpha_c_g(ctx, alpha, g):
    """M[k, b, c] = V_{b alpha, c g}."""
    return ctx.block(g)[:, :, alpha, :]


def eta_second(ctx, alpha, a=0, phi_index="greek"):
    """Second-order E-side connection matrix eta^(2)[k, b, c], all printed sums."""
    if phi_index not in ETA2_PHI_INDEX:
        raise ValueError(f"phi_index must be one of {ETA2_PHI_INDEX}")
    ds, de, eps = ctx.dim_s, ctx.dim_e, ctx.epsilon
    be = ctx.berry_e
    out = be[:, alpha, alpha][:, None, None] * np.eye(ds)
    if ctx.frame_e.constant or eps == 0:
        return out.astype(complex)
    V = ctx.elements  # [k, c, g, b, beta]
    n = ctx.n
    mu, nu = ctx.mu, ctx.nu

    vdiag = {g: ctx.diag(g) for g in range(de)}

    def D(c, al, d, de_):
        # Delta_{c al, d de_}
        return mu[:, c] - mu[:, d] + nu[:, al] - nu[:, de_] + eps * vdiag[al][:, c]

    def inv(x):
        ctx.check(x, "eta")
        return 1.0 / x

    out = out.astype(complex).copy()
    S, E = range(ds), range(de)
    for b in S:
        for c in S:
            acc = np.zeros(n, dtype=complex)
            if b != c:
                for dl_ in E:
                    if dl_ == alpha:
                        continue
                    acc += eps * V[:, b, dl_, c, alpha] * be[:, alpha, dl_] * inv(D(c, alpha, b, dl_))
                    acc += eps * V[:, b, alpha, c, dl_] * be[:, dl_, alpha] * inv(D(b, alpha, c, dl_))
            e2 = np.zeros(n, dtype=complex)
            # (3) d != c, delta != alpha, any gamma, d != b
            for d in S:
                if d == c or d == b:
                    continue
                for dl_ in E:
                    if dl_ == alpha:
                        continue
                    for g in E:
                        e2 += V[:, d, dl_, c, alpha] * V[:, b, alpha, d, g] * be[:, g, dl_] * inv(D(c, alpha, d, dl_) * D(b, alpha, d, g))
            if b != c:
                # (4) delta != alpha, e != c, phi excluded per switch
                for dl_ in E:
                    if dl_ == alpha:
                        continue
                    for e in S:
                        if e == c:
                            continue
                        for ph in E:
                            if (phi_index == "greek" and ph == alpha) or (phi_index == "as-printed" and ph == a):
                                continue
                            num = V[:, b, dl_, e, ph] * V[:, e, ph, c, alpha] - V[:, e, ph, c, alpha] * V[:, c, alpha, c, alpha]
                            e2 += num * be[:, alpha, dl_] * inv(D(c, alpha, b, dl_) * D(c, alpha, e, ph))
            # (5) gamma != alpha, d != c, d != b
            for g in E:
                if g == alpha:
                    continue
                for d in S:
                    if d == c or d == b:
                        continue
                    e2 += V[:, b, alpha, d, g] * V[:, d, alpha, c, alpha] * be[:, g, alpha] * inv(D(b, alpha, d, g) * D(d, alpha, c, alpha))
            if b != c:
                # (6) delta != alpha, e != b, phi != alpha
                for dl_ in E:
                    if dl_ == alpha:
                        continue
                    for e in S:
                        if e == b:
                            continue
                        for ph in E:
                            if ph == alpha:
                                continue
                            num = V[:, e, ph, c, dl_] * V[:, b, alpha, e, ph] - V[:, b, alpha, e, ph] * V[:, b, alpha, b, alpha]
                            e2 += num * be[:, dl_, alpha] * inv(D(b, alpha, c, dl_) * D(b, alpha, e, ph))
            for ph in E:
                if ph == alpha:
                    continue
                # (7) k != c, gamma not in {phi, alpha}
                for k in S:
                    if k == c:
                        continue
                    for g in E:
                        if g in (ph, alpha):
                            continue
                        num = V[:, b, alpha, k, g] * V[:, k, g, c, ph] - V[:, k, g, c, ph] * V[:, c, ph, c, ph]
                        e2 -= num * be[:, ph, alpha] * inv(D(c, ph, b, alpha) * D(c, ph, k, g))
                for k in S:
                    if k == b:
                        continue
                    for g in E:
                        if g == alpha:
                            continue
                        # (8)
                        num = V[:, k, g, c, ph] * V[:, b, alpha, k, g] - V[:, b, alpha, k, g] * V[:, b, alpha, b, alpha]
                        e2 -= num * be[:, ph, alpha] * inv(D(b, alpha, c, ph) * D(b, alpha, k, g))
                        # (9)
                        if (k, g) != (c, ph):
                            e2 -= V[:, k, g, c, ph] * V[:, b, alpha, k, g] * be[:, ph, alpha] * inv(D(c, ph, k, g) * D(b, alpha, k, g))
            out[:, b, c] += acc + eps**2 * e2
    return out


# ------------------------------------------------------- density eigenmatrices


def density_first(ctx, a, alpha):
    """rho_{a alpha} to first order (Hermitian form of the two cross terms)."""
    coef = wb_coefficients_first(ctx, alpha)[:, :, a]  # eps V_{b alpha, a alpha}/Delta_{a alpha, b alpha}
    za = ctx.zeta[:, :, a]
    cross = np.einsum("kib,kb->ki", ctx.zeta, coef) - za  # eps sum_{b != a} ... zeta_b
    rho = np.einsum("ki,kj->kij", za, za.conj())
    c = np.einsum("ki,kj->kij", cross, za.conj())
    return rho + c + dagger(c)


def full_eigenvector(family, s, ref):
    """Eigenvectors of the full H at points ``s`` with maximal overlap with ``ref`` (n, dim).

    The returned vectors are phase aligned so that <ref|phi> is real positive.
    """
    h = family.full(s)
    _, v = hermitian_eigen(h)
    ov = np.einsum("ki,kij->kj", ref.conj(), v)
    j = np.argmax(np.abs(ov), axis=1)
    phi = np.take_along_axis(v, j[:, None, None], axis=2)[..., 0]
    o = ov[np.arange(len(j)), j]
    return phi * (np.abs(o) / np.where(np.abs(o) > 0, o, 1.0))[:, None]


def density_exact(ctx, family, a, alpha, idx=None):
    """tr_E of the projector on the full eigenvector continuously linked to zeta_a (x) xi_alpha."""
    idx = np.arange(ctx.n) if idx is None else np.asarray(idx)
    ref = np.einsum("ki,kj->kij", ctx.zeta[idx, :, a], ctx.xi[idx, :, alpha]).reshape(idx.size, -1)
    phi = full_eigenvector(family, ctx.s[idx], ref)
    return partial_trace_vector(phi, ctx.dim_s, ctx.dim_e)


def density_second(ctx, a, alpha, rho_base=None):
    """Second-order corrected density matrix rho^(2)_{a alpha}.

    ``rho_base`` defaults to the first-order rho_{a alpha}. The middle sum is
    read with d != f where the printed constraint names an unbound index.
    """
    ds, de, eps = ctx.dim_s, ctx.dim_e, ctx.epsilon
    rho = density_first(ctx, a, alpha) if rho_base is None else np.array(rho_base, dtype=complex)
    V = ctx.elements
    dl = ctx.delta(alpha)  # [k, c, d, delta] = Delta_{c alpha, d delta}
    corr = np.zeros((ctx.n, ds, ds), dtype=complex)  # coefficients in the zeta basis
    for g in range(de):
        if g == alpha:
            continue
        for d in range(ds):
            if d == a:
                continue
            inv_a = 1.0 / ctx.check(dl[:, a, d, g], "density")
            for c in range(ds):
                if d == c:
                    continue
                inv_c = 1.0 / ctx.check(dl[:, c, d, g], "density")
                corr[:, c, a] += V[:, c, alpha, d, g] * V[:, d, g, a, alpha] * inv_c * inv_a
            for f in range(ds):
                if d == f:
                    continue
                inv_f = 1.0 / ctx.check(dl[:, f, d, g], "density")
                corr[:, a, f] += V[:, d, g, f, alpha] * V[:, a, alpha, d, g] * inv_f * inv_a
    for dd in range(de):
        if dd == alpha:
            continue
        for c in range(ds):
            if c == a:
                continue
            for f in range(ds):
                if f == a:
                    continue
                den = ctx.check(dl[:, a, f, dd] * dl[:, a, c, dd], "density")
                corr[:, c, f] -= V[:, a, alpha, f, dd] * V[:, c, dd, a, alpha] / den
    return rho + eps**2 * ctx.zeta @ corr @ dagger(ctx.zeta)


def w_operator(ctx, delta_lbl, alpha):
    """W_{delta alpha} = sum_d sum_{c != d} V_{d delta, c alpha}/Delta_{c alpha, d delta} |zeta_d><zeta_c|."""
    ds = ctx.dim_s
    va = ctx.block(alpha)[:, :, delta_lbl, :]  # [k, d, c] = V_{d delta, c alpha}
    dl = ctx.delta(alpha)[:, :, :, delta_lbl]  # [k, c, d] = Delta_{c alpha, d delta}
    inv = _inv(ctx, dl, _off(ds)[None], "jump operator")
    m = va * inv.transpose(0, 2, 1)
    return ctx.zeta @ m @ dagger(ctx.zeta)


def a2_extra(ctx, alpha):
    """eps^2 sum_{d!=c, f!=b, delta!=alpha} V_{d delta,c alpha} V_{b alpha,f delta} <zeta_f|zeta_d'> / (Delta Delta), [k, b, c]."""
    ds, de, eps = ctx.dim_s, ctx.dim_e, ctx.epsilon
    off = _off(ds)
    out = np.zeros((ctx.n, ds, ds), dtype=complex)
    bs = ctx.berry_s  # [k, f, d] = <zeta_f|zeta_d'>
    dl = ctx.delta(alpha)
    for g in range(de):
        if g == alpha:
            continue
        vdc = ctx.block(alpha)[:, :, g, :]  # [k, d, c] = V_{d g, c alpha}
        inv_cd = _inv(ctx, dl[:, :, :, g], off[None], "geometric")  # [k, c, d]
        left = vdc * inv_cd.transpose(0, 2, 1)  # [k, d, c]
        right = np.conj(vdc) * inv_cd.transpose(0, 2, 1)  # [k, f, b] = V_{b alpha, f g}/Delta_{b alpha, f g}
        out += np.einsum("kfb,kfd,kdc->kbc", right, bs, left)
    return eps**2 * out
