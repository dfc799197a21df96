"""Timescales, theorem-assumption checks and regime classification."""

from dataclasses import asdict, dataclass, field
import json
import math

import numpy as np

from .perturb import PerturbationContext
from .spectral import check_frame

LOW = 10 ** -1.5
HIGH = 10 ** 1.5
TAGS = ("very-strong", "strong", "weak", "unclassified")


@dataclass(frozen=True)
class Thresholds:
    """Ratio thresholds turning the asymptotic relations into decisions.

    ``x << y`` means x/y <= low; ``x ~ y`` means low < x/y < high.
    """

    low: float = LOW
    high: float = HIGH
    continuity: float = 1 - 1e-3

    def much_less(self, x, y):
        return x <= self.low * y

    def comparable(self, x, y):
        return self.low < x / y < self.high


@dataclass
class Timescales:
    tau_S: float
    tau_E: float
    theta_eps: float
    T: float
    Delta_ratio: float
    tau_S_eps: float | None = None
    theta_eps_diagonal: float | None = None
    theta_eps_shifted: float | None = None
    coupling_norm: float = 0.0


@dataclass
class ClauseVerdict:
    theorem: str
    clause: str
    status: str
    value: float | None = None
    witness_s: float | None = None
    margin: float | None = None
    detail: str = ""


@dataclass
class RegimeReport:
    timescales: Timescales
    clauses: list = field(default_factory=list)
    classification: str = "unclassified"
    spectral_split: float | None = None
    labels: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "timescales": asdict(self.timescales),
            "clauses": [asdict(c) for c in self.clauses],
            "classification": self.classification,
            "spectral_split": self.spectral_split,
            "labels": self.labels,
        }

    def to_json(self):
        return json.dumps(_finite(self.to_dict()), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            Timescales(**d["timescales"]),
            [ClauseVerdict(**c) for c in d["clauses"]],
            d["classification"],
            d.get("spectral_split"),
            d.get("labels", {}),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(_restore(json.loads(text)))

    def clause(self, theorem, clause):
        for c in self.clauses:
            if c.theorem == theorem and c.clause == clause:
                return c
        raise KeyError((theorem, clause))


def _finite(obj):
    # JSON has no infinity; encode it as a string and decode it back
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def _restore(obj):
    if isinstance(obj, dict):
        return {k: _restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore(v) for v in obj]
    if obj in ("inf", "-inf"):
        return float(obj)
    return obj


# ------------------------------------------------------------------ helpers


def coupling_norm(ctx: PerturbationContext):
    """Largest matrix element magnitude of V over the grid (the figure-level norm)."""
    if callable(ctx.v_op):
        return float(np.abs(ctx._v_stack()).max())
    return float(np.abs(np.asarray(ctx.v_op)).max())


def diagonal_elements(ctx: PerturbationContext):
    """V_{b beta, b beta} for every label pair, shape (n, dim_s, dim_e)."""
    if ctx._fast_blocks:
        w = ctx._v_e_constant
        wd = np.einsum("igjg->igj", w)
        return np.real(np.einsum("kib,igj,kjb->kbg", ctx.zeta.conj(), wd, ctx.zeta))
    return np.real(np.einsum("kbgbg->kbg", ctx.elements))


def level_scale(ctx):
    """Median over the grid of the mean spacing of the unperturbed product levels."""
    lv = (ctx.mu[:, :, None] + ctx.nu[:, None, :]).reshape(ctx.n, -1)
    spread = lv.max(axis=1) - lv.min(axis=1)
    return float(np.median(spread / max(1, lv.shape[1] - 1)))


def _sup_inv(gap, hbar):
    g = np.min(np.abs(gap))
    return float("inf") if g == 0 else hbar / g


def compute_timescales(ctx: PerturbationContext, T, a=0, alpha=0):
    hbar, eps = ctx.hbar, ctx.epsilon
    mu, nu = ctx.mu, ctx.nu
    others_s = [b for b in range(ctx.dim_s) if b != a]
    others_e = [g for g in range(ctx.dim_e) if g != alpha]
    tau_s = _sup_inv(mu[:, others_s] - mu[:, [a]], hbar) if others_s else float("inf")
    tau_e = _sup_inv(nu[:, others_e] - nu[:, [alpha]], hbar) if others_e else float("inf")
    vnorm = coupling_norm(ctx)
    theta = hbar / (eps * vnorm) if eps * vnorm > 0 else float("inf")

    vd = diagonal_elements(ctx)
    dv = vd - vd[:, [a], [alpha]][:, :, None]
    mask = np.ones((ctx.dim_s, ctx.dim_e), bool)
    mask[a, alpha] = False
    dmax = np.abs(dv[:, mask]).max() if mask.any() else 0.0
    theta_diag = hbar / (eps * dmax) if eps * dmax > 0 else float("inf")
    shifted = (mu - mu[:, [a]])[:, :, None] + eps * dv
    smax = np.abs(shifted[:, mask]).max() if mask.any() else 0.0
    theta_shift = hbar / smax if smax > 0 else float("inf")

    delta = float("inf")
    if others_s and others_e:
        dmu = mu[:, others_s] - mu[:, [a]]
        dnu = nu[:, others_e] - nu[:, [alpha]]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.abs(1 + dnu[:, :, None] / dmu[:, None, :])
        delta = float(np.nanmin(np.nanmax(r, axis=2)))

    tau_s_eps = None
    if others_e and others_s:
        dnu = nu[:, others_e] - nu[:, [alpha]]
        hits = np.nonzero(np.any((np.sign(dnu[1:]) != np.sign(dnu[:-1])) | (dnu[1:] == 0), axis=1))[0] + 1
        if hits.size:
            vals = []
            for k in hits:
                for j, g in enumerate(others_e):
                    if np.sign(dnu[k, j]) != np.sign(dnu[k - 1, j]) or dnu[k, j] == 0:
                        x = np.abs(mu[k, others_s] - mu[k, a] + eps * (vd[k, others_s, g] - vd[k, a, alpha]))
                        vals.append(hbar / x.min() if x.min() > 0 else float("inf"))
            tau_s_eps = float(max(vals))
    return Timescales(
        tau_S=tau_s,
        tau_E=tau_e,
        theta_eps=theta,
        T=float(T),
        Delta_ratio=delta,
        tau_S_eps=tau_s_eps,
        theta_eps_diagonal=theta_diag,
        theta_eps_shifted=theta_shift,
        coupling_norm=vnorm,
    )


# ------------------------------------------------------------------ clauses


def _smoothness(ctx, theorem, th):
    worst, where = 1.0, None
    for name, fr in (("S", ctx.frame_s), ("E", ctx.frame_e)):
        if fr.constant:
            continue
        ov = np.abs(np.einsum("kij,kij->kj", fr.vectors[:-1].conj(), fr.vectors[1:])).min(axis=1)
        k = int(np.argmin(ov))
        if ov[k] < worst:
            worst, where = float(ov[k]), float(ctx.s[k + 1])
    ok = worst >= th.continuity
    return ClauseVerdict(theorem, "i", "pass" if ok else "fail", worst, where, worst / th.continuity, "min adjacent eigenvector overlap")


def _argmin(x, s):
    k = np.unravel_index(np.argmin(x), x.shape)
    return float(x[k]), float(s[k[0]])


def check_theorem_assumptions(which, ctx: PerturbationContext, a=0, alpha=0, th: Thresholds = Thresholds()):
    """Clause verdicts for the strong or weak theorem at labels (a, alpha)."""
    if which not in ("strong", "weak"):
        raise ValueError("which must be 'strong' or 'weak'")
    eps = ctx.epsilon
    eps_scale = eps * coupling_norm(ctx)
    scale = level_scale(ctx)
    mu, nu, s = ctx.mu, ctx.nu, ctx.s
    vd = diagonal_elements(ctx)
    out = [_smoothness(ctx, which, th)]
    mask = np.ones((ctx.dim_s, ctx.dim_e), bool)
    mask[a, alpha] = False
    if which == "strong":
        lam = mu[:, :, None] + nu[:, None, :] + eps * vd
        gap = np.abs(lam - lam[:, [a], [alpha]][:, :, None])[:, mask]
        v, w = _argmin(gap, s)
        ok = v > th.low * eps_scale
        out.append(ClauseVerdict("strong", "ii", "pass" if ok else "fail", v, w, v / (th.low * eps_scale), "no resonance of perturbed levels"))
        pert = mu[:, :, None] + eps * vd
        g3 = np.abs(pert - pert[:, [a], [alpha]][:, :, None])[:, mask]
        v, w = _argmin(g3, s)
        ratio = v / eps_scale if eps_scale > 0 else float("inf")
        ok = th.low < ratio < th.high
        out.append(ClauseVerdict("strong", "iii", "pass" if ok else "fail", v, w, ratio, "order-eps gap of perturbed S energies, ratio to eps*|V|"))
        return out

    # weak theorem: clause (ii) at every c, (b beta) with beta != alpha
    de = nu - nu[:, [alpha]]
    d = mu[:, :, None, None] - mu[:, None, :, None] + de[:, None, None, :]  # [k, b, c, beta]
    sel = np.ones(d.shape[1:], bool)
    sel[:, :, alpha] = False
    if sel.any():
        v, w = _argmin(np.abs(d[:, sel]), s)
        if v >= th.low * scale:
            out.append(ClauseVerdict("weak", "ii", "pass", v, w, v / (th.low * scale), "no quasi-resonance"))
        else:
            # relaxed form: exact resonances are allowed where the diagonal couplings differ
            dv = vd[:, :, None, :] - vd[:, None, :, alpha][..., None]  # V_{b beta} - V_{c alpha}
            near = np.abs(d) < th.low * scale
            near &= sel[None]
            lift = np.abs(eps * dv)[near]
            worst = float(lift.min()) if lift.size else float("inf")
            ok = worst > th.low * eps_scale
            out.append(
                ClauseVerdict(
                    "weak",
                    "ii",
                    "pass" if ok else "fail",
                    v,
                    w,
                    worst / (th.low * eps_scale) if eps_scale > 0 else 0.0,
                    "quasi-resonance present; relaxed form (resonances lifted by diagonal coupling differences)",
                )
            )
        gap_e = np.abs(de[:, [g for g in range(ctx.dim_e) if g != alpha]])
        v, w = _argmin(gap_e, s)
        ok = v >= th.low * scale
        out.append(ClauseVerdict("weak", "iii", "pass" if ok else "fail", v, w, v / (th.low * scale), "order-one E gap"))
    else:
        out.append(ClauseVerdict("weak", "ii", "pass", None, None, None, "single E level"))
        out.append(ClauseVerdict("weak", "iii", "pass", None, None, None, "single E level"))
    out.append(ClauseVerdict("weak", "iv", "assumed", detail="resolvent regularity is not checked numerically"))
    others = [b for b in range(ctx.dim_s) if b != a]
    if others and eps_scale > 0:
        v, w = _argmin(np.abs(mu[:, others] - mu[:, [a]]), s)
        ratio = v / eps_scale
        ok = th.low < ratio < th.high
        out.append(ClauseVerdict("weak", "v", "pass" if ok else "fail", v, w, ratio, "optional: order-eps S gap"))
    return out


def spectral_split(ctx, alpha):
    """min_s dist(sigma_alpha, sigma_perp) with first-order energies."""
    lam = ctx.mu[:, :, None] + ctx.nu[:, None, :] + ctx.epsilon * diagonal_elements(ctx)
    own = lam[:, :, alpha]
    rest = np.delete(lam, alpha, axis=2).reshape(ctx.n, -1)
    if rest.shape[1] == 0:
        return float("inf")
    return float(np.abs(own[:, :, None] - rest[:, None, :]).min())


def classify_timescales(ts: Timescales, th: Thresholds = Thresholds()):
    t_s, t_e, th_e, T = ts.tau_S, ts.tau_E, ts.theta_eps, ts.T
    if th.much_less(t_s, th_e) and th.much_less(t_s, T):
        return "very-strong"
    if th.comparable(t_s, th_e) and th.much_less(th_e, T):
        return "strong"
    if th.comparable(th_e, T) and th.much_less(t_e, T):
        return "weak"
    return "unclassified"


def classify(report: RegimeReport, th: Thresholds = Thresholds()):
    """Timescale tag, downgraded when the matching theorem's clauses fail."""
    tag = classify_timescales(report.timescales, th)
    need = {"very-strong": ("strong", ("i", "ii", "iii")), "strong": ("strong", ("i", "ii", "iii")), "weak": ("weak", ("i", "ii", "iii"))}
    if tag in need:
        theorem, names = need[tag]
        for c in report.clauses:
            if c.theorem == theorem and c.clause in names and c.status == "fail":
                return "unclassified"
    return tag


def regime_report(ctx: PerturbationContext, T, a=0, alpha=0, th: Thresholds = Thresholds()):
    ts = compute_timescales(ctx, T, a, alpha)
    clauses = check_theorem_assumptions("strong", ctx, a, alpha, th) + check_theorem_assumptions("weak", ctx, a, alpha, th)
    rep = RegimeReport(ts, clauses, spectral_split=spectral_split(ctx, alpha), labels={"a": a, "alpha": alpha})
    rep.classification = classify(rep, th)
    return rep


def frame_quality(ctx, family):
    """Residual/orthonormality summary of both tracked frames."""
    return {
        "S": check_frame(ctx.frame_s, family.h_s),
        "E": check_frame(ctx.frame_e, family.h_e),
    }
