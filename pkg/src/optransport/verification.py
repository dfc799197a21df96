"""Refinement and scaling studies shared by the ``verify`` command and the test suite."""

import numpy as np

from . import models, perturb as pt, regimes, transport as tr
from .linalg import (
    adjoint_action,
    dagger,
    expm_antihermitian,
    partial_trace_env,
    partial_trace_vector,
    tensor_product,
)
from .spectral import Grid, track_eigensystem

EPS_LADDER = (1e-2, 5e-3, 2.5e-3, 1.25e-3)
SUITES = ("linalg", "perturb", "transport", "regimes", "scaling", "corollary", "all")


def slope(x, y):
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def _check(value, lo=None, hi=None, **extra):
    ok = (lo is None or value >= lo) and (hi is None or value <= hi)
    return {"pass": bool(ok), "value": float(value), "lo": lo, "hi": hi, **extra}


def random_context(seed, epsilon, count=5, e_drift=True, gauge="pivot-real"):
    fam = models.random_family(seed, epsilon=epsilon, e_drift=e_drift)
    grid = Grid.uniform(count)
    fs = track_eigensystem(fam.h_s, grid, gauge)
    fe = track_eigensystem(fam.h_e, grid, gauge)
    return fam, pt.PerturbationContext(fs, fe, fam.v, epsilon)


def model_context(family, grid, gauge="analytic"):
    fs = track_eigensystem(family.h_s, grid, gauge, analytic=family.analytic_s)
    fe = track_eigensystem(
        family.h_e, grid, "analytic" if family.analytic_e is not None else gauge,
        analytic=family.analytic_e, constant=family.h_e_constant,
    )
    v = np.asarray(family.v(0.0))[0] if family.v_constant else family.v
    return pt.PerturbationContext(fs, fe, v, family.epsilon, family.hbar)


def _exact_pair(fam, ctx, b, beta):
    ref = np.einsum("ki,kj->kij", ctx.zeta[:, :, b], ctx.xi[:, :, beta]).reshape(ctx.n, -1)
    phi = pt.full_eigenvector(fam, ctx.s, ref)
    lam = np.real(np.einsum("ki,kij,kj->k", phi.conj(), fam.full(ctx.s), phi))
    return phi, lam


def perturbation_ladder(seed=1, eps_list=EPS_LADDER, b=1, beta=1, count=5):
    """Errors of the perturbative eigen-objects against exact diagonalisation, per epsilon."""
    keys = ("energy1", "vector1", "vector2", "vector2_printed", "biorth_printed", "biorth_standard",
            "zeta2_printed", "zeta2_complete", "dual2_printed", "density1", "density2")
    out = {k: [] for k in keys}
    for eps in eps_list:
        fam, ctx = random_context(seed, eps, count)
        ds, de = ctx.dim_s, ctx.dim_e
        phi, lam = _exact_pair(fam, ctx, b, beta)
        out["energy1"].append(np.abs(pt.rs_energy_first(ctx, b, beta) - lam).max())
        basis = pt._product_basis(ctx)
        comp = np.einsum("kij,ki->kj", basis.conj(), phi)
        phi_in = phi / comp[:, b * de + beta][:, None]
        out["vector1"].append(np.abs(pt.rs_vector_first(ctx, b, beta) - phi_in).max())
        out["vector2"].append(np.abs(pt.rs_vector_second(ctx, b, beta, "standard") - phi_in).max())
        out["vector2_printed"].append(np.abs(pt.rs_vector_second(ctx, b, beta, "as-printed") - phi_in).max())
        for var, key in (("as-printed", "biorth_printed"), ("standard", "biorth_standard")):
            vecs = np.stack([pt.rs_vector_second(ctx, c // de, c % de, var) for c in range(ds * de)], -1)
            duals = np.stack([pt.biorth_dual_full(ctx, c // de, c % de, var) for c in range(ds * de)], -1)
            gram = np.einsum("kia,kib->kab", duals.conj(), vecs)
            out[key].append(np.abs(gram - np.eye(ds * de)).max())
        comp_alpha = np.einsum("kij,kj->ki", phi_in.reshape(ctx.n, ds, de), ctx.xi[:, :, beta].conj())
        out["zeta2_printed"].append(np.abs(pt.wb_basis_second(ctx, beta, "as-printed")[:, :, b] - comp_alpha).max())
        out["zeta2_complete"].append(np.abs(pt.wb_basis_second(ctx, beta, "complete")[:, :, b] - comp_alpha).max())
        z2 = pt.wb_basis_second(ctx, beta)
        d2 = pt.wb_dual_basis_second(ctx, beta)
        out["dual2_printed"].append(np.abs(np.einsum("kia,kib->kab", d2.conj(), z2) - np.eye(ds)).max())
        rho = partial_trace_vector(phi, ds, de)
        out["density1"].append(np.abs(pt.density_first(ctx, b, beta) - rho).max())
        out["density2"].append(np.abs(pt.density_second(ctx, b, beta) - rho).max())
    errors = {k: np.array(v) for k, v in out.items()}
    return {"eps": np.array(eps_list), "errors": errors, "slopes": {k: slope(eps_list, v) for k, v in errors.items()}}


def generator_ladder(seed=1, eps_list=EPS_LADDER, count=20001, fractions=(0.125, 0.375, 0.625, 0.875), e_drift=False, eta="diagonal"):
    """max |(A_alpha - A^(1)_alpha - C) rho_{a alpha}| over sample points, per epsilon.

    ``eta="diagonal"`` takes C = <xi_alpha|xi_alpha'> 1; ``eta="complete"``
    takes C as the full first-order E-side connection in the zeta^(1) basis.
    The product with rho restricts the comparison to the support of rho.
    """
    grid = Grid.uniform(count)
    pts = [int(f * (count - 1)) for f in fractions]
    errs = []
    for eps in eps_list:
        fam = models.random_family(seed, epsilon=eps, e_drift=e_drift)
        fs = track_eigensystem(fam.h_s, grid)
        fe = track_eigensystem(fam.h_e, grid)
        ctx = pt.PerturbationContext(fs, fe, fam.v, eps)
        z = pt.wb_basis_first(ctx, 0)
        der = np.gradient(z, ctx.s, axis=0, edge_order=2)
        a1 = z @ np.einsum("kib,kic->kbc", z.conj(), der) @ dagger(z)
        if eta == "complete":
            corr = z @ pt.eta_first(ctx, 0, "complete") @ dagger(z)
        else:
            corr = ctx.berry_e[:, 0, 0][:, None, None] * np.eye(ctx.dim_s)
        e = 0.0
        for k in pts:
            a_ex, rho = tr.geometric_generator_exact(ctx, fam, 0, 0, k)
            e = max(e, float(np.abs((a_ex - a1[k] - corr[k]) @ rho).max()))
        errs.append(e)
    return {"eps": np.array(eps_list), "errors": np.array(errs), "slope": slope(eps_list, errs)}


def random_antihermitian_pair(seed=7, dim=3):
    rng = np.random.default_rng(seed)

    def ah():
        m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        return 0.5 * (m - m.conj().T)

    a0, a1, b0, b1 = ah(), ah(), ah(), ah()

    def a_fn(s):
        return a0 + np.sin(2 * np.pi * s)[:, None, None] * a1

    def b_fn(s):
        return np.cos(3 * s)[:, None, None] * b0 + (s**2)[:, None, None] * b1

    return a_fn, b_fn


def corollary_refinement(seed=7, counts=(101, 201, 401, 801, 1601)):
    a_fn, b_fn = random_antihermitian_pair(seed)
    res = np.array([tr.verify_splitting_corollary(a_fn, b_fn, Grid.uniform(n)) for n in counts])
    steps = 1.0 / (np.array(counts) - 1)
    return {"steps": steps, "residuals": res, "slope": slope(steps, res)}


def weak_order_ladder(eps_list=EPS_LADDER, T=200.0, count=20001, stride=20):
    """max |rho_weak1 - rho_weak0| and |rho_weak2 - rho_weak1| on the non-resonant atomic model."""
    grid = Grid.uniform(count)
    d10, d21 = [], []
    for eps in eps_list:
        fam = models.build_atomic_pair(models.AtomicPairParams.strong(epsilon=eps))
        ctx = model_context(fam, grid)
        r = {o: tr.transport_weak(ctx, 0, 0, T, o, stride)[0] for o in (0, 1, 2)}
        d10.append(np.abs(r[1] - r[0]).max())
        d21.append(np.abs(r[2] - r[1]).max())
    return {"eps": np.array(eps_list), "d10": np.array(d10), "d21": np.array(d21),
            "slope10": slope(eps_list, d10), "slope21": slope(eps_list, d21)}


def gauge_swap(family, T, alpha=0, count=20001, stride=10, orders=(0, 1)):
    """max |rho(pivot-real) - rho(analytic)| for weak transports at fixed grid."""
    grid = Grid.uniform(count)
    out = {}
    for gauge in ("analytic", "pivot-real"):
        ctx = model_context(family, grid, gauge)
        out[gauge] = {o: tr.transport_weak(ctx, 0, alpha, T, o, stride)[0] for o in orders}
    return {o: float(np.abs(out["pivot-real"][o] - out["analytic"][o]).max()) for o in orders}


# ----------------------------------------------------------------- suites


def suite_linalg(seed=0):
    rng = np.random.default_rng(seed)
    res = {}
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    b = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    brute = np.array([[a[i // 3, j // 3] * b[i % 3, j % 3] for j in range(6)] for i in range(6)])
    res["tensor_oracle"] = _check(np.abs(tensor_product(a, b) - brute).max(), hi=1e-14)
    m = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    rho = m @ m.conj().T
    rho /= np.trace(rho)
    loop = np.zeros((2, 2), complex)
    for i in range(2):
        for j in range(2):
            loop[i, j] = sum(rho[i * 3 + g, j * 3 + g] for g in range(3))
    res["partial_trace_oracle"] = _check(np.abs(partial_trace_env(rho, 2, 3) - loop).max(), hi=1e-14)
    h = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    u = expm_antihermitian(0.5j * (h + h.conj().T) * 0.3)
    res["unitarity"] = _check(np.abs(dagger(u) @ u - np.eye(4)).max(), hi=1e-12)
    r2 = adjoint_action(u, rho[:4, :4] / np.trace(rho[:4, :4]))
    res["adjoint_trace"] = _check(abs(np.trace(r2) - 1), hi=1e-12)
    return res


def suite_perturb():
    lad = perturbation_ladder()
    s = lad["slopes"]
    return {
        "energy1_slope": _check(s["energy1"], 1.7, 2.3),
        "vector1_slope": _check(s["vector1"], 1.7, 2.3),
        "vector2_slope": _check(s["vector2"], 2.6, 3.4),
        "biorth_slope": _check(s["biorth_printed"], 2.6, 3.4),
        "density1_slope": _check(s["density1"], 1.7, 2.3),
    }


def suite_scaling():
    res = suite_perturb()
    g = generator_ladder()
    res["generator_slope"] = _check(g["slope"], 1.7, 2.3)
    w = weak_order_ladder()
    res["weak1_weak0_slope"] = _check(w["slope10"], 0.6, 1.4)
    res["weak2_weak1_slope"] = _check(w["slope21"], 1.6, 2.4)
    return res


def suite_corollary():
    c = corollary_refinement()
    return {"splitting_slope": _check(c["slope"], 1.7, 2.3, residuals=c["residuals"].tolist())}


def suite_transport():
    res = {}
    fam = models.build_atomic_pair(models.AtomicPairParams.weak())
    for o, v in gauge_swap(fam, 200.0).items():
        res[f"gauge_swap_weak{o}"] = _check(v, hi=1e-8)
    res.update(suite_corollary())
    res["lz_sweep"] = _check(abs(tr.landau_zener_p(100, 1e-2, 1.0, 1.0) - tr.landau_zener_sweep(100, 1e-2, 1.0, 1.0)), hi=1e-5)
    return res


def suite_regimes():
    res = {}
    grid = Grid.uniform(2001)
    chain = models.build_spin_chain(models.SpinChainParams.weak())
    cases = (
        ("atomic_strong", models.build_atomic_pair(models.AtomicPairParams.strong()), 20000.0, 0, "strong"),
        ("atomic_weak", models.build_atomic_pair(models.AtomicPairParams.weak()), 200.0, 0, "weak"),
        ("chain_weak", chain, 50.0, models.chain_label_index(chain, "(000)", "(000)"), "weak"),
    )
    for name, fam, T, alpha, want in cases:
        rep = regimes.regime_report(model_context(fam, grid), T, 0, alpha)
        res[name] = {"pass": rep.classification == want, "value": rep.classification, "expected": want}
    return res


def run_suite(tag):
    if tag not in SUITES:
        raise ValueError(f"unknown suite {tag!r}; expected one of {SUITES}")
    table = {
        "linalg": suite_linalg,
        "perturb": suite_perturb,
        "transport": suite_transport,
        "regimes": suite_regimes,
        "scaling": suite_scaling,
        "corollary": suite_corollary,
    }
    names = [t for t in SUITES if t != "all"] if tag == "all" else [tag]
    if tag == "all":
        names.remove("perturb")  # covered by scaling
    report = {n: table[n]() for n in names}
    report["pass"] = all(c["pass"] for sub in report.values() for c in sub.values())
    return report
