"""Benchmark bipartite systems: a driven atomic qubit coupled to a second
qubit, and a driven spin in the middle of a Heisenberg chain.

A :class:`HamiltonianFamily` holds vectorised evaluators for H_S(s), H_E(s)
and the coupling operator V(s) on the reduced time s in [0, 1]. The total
Hamiltonian is H = H_S (x) 1 + 1 (x) H_E + epsilon V with the S factor major.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional
import re

import numpy as np

from .linalg import tensor_product

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)


def as_grid(s):
    return np.atleast_1d(np.asarray(s, dtype=float))


def _constant(m):
    m = np.asarray(m, dtype=complex)

    def fn(s):
        s = as_grid(s)
        return np.broadcast_to(m, (s.size,) + m.shape)

    return fn


@dataclass(frozen=True)
class HamiltonianFamily:
    """Bipartite Hamiltonian family H(s) = H_S(s)(x)1 + 1(x)H_E(s) + eps V(s).

    Evaluators take an array of reduced times and return stacks of matrices
    with a leading grid axis. ``analytic_s``/``analytic_e`` optionally return
    closed-form ``(values, vectors)`` for the component eigenproblems.
    """

    dim_s: int
    dim_e: int
    h_s: Callable
    h_e: Callable
    v: Callable
    epsilon: float
    hbar: float = 1.0
    closed: bool = False
    h_e_constant: bool = False
    v_constant: bool = False
    analytic_s: Optional[Callable] = None
    analytic_e: Optional[Callable] = None
    labels_s: tuple = ()
    labels_e: tuple = ()
    name: str = "custom"
    info: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.dim_s * self.dim_e

    def full(self, s):
        s = as_grid(s)
        hs = np.asarray(self.h_s(s))
        he = np.asarray(self.h_e(s))
        eye_s = np.eye(self.dim_s)
        eye_e = np.eye(self.dim_e)
        return (
            tensor_product(hs, np.broadcast_to(eye_e, (s.size,) + eye_e.shape))
            + tensor_product(np.broadcast_to(eye_s, (s.size,) + eye_s.shape), he)
            + self.epsilon * np.asarray(self.v(s))
        )

    def with_epsilon(self, epsilon):
        return _replace(self, epsilon=float(epsilon))


def _replace(family, **changes):
    from dataclasses import replace

    return replace(family, **changes)


def build_family(h_s, h_e, v, epsilon, **kwargs):
    """Family from callables or constant matrices."""
    h_s_fn = h_s if callable(h_s) else _constant(h_s)
    h_e_fn = h_e if callable(h_e) else _constant(h_e)
    v_fn = v if callable(v) else _constant(v)
    dim_s = np.asarray(h_s_fn(0.0)).shape[-1]
    dim_e = np.asarray(h_e_fn(0.0)).shape[-1]
    kwargs.setdefault("h_e_constant", not callable(h_e))
    kwargs.setdefault("v_constant", not callable(v))
    return HamiltonianFamily(dim_s, dim_e, h_s_fn, h_e_fn, v_fn, float(epsilon), **kwargs)


# ---------------------------------------------------------------- atomic pair


@dataclass(frozen=True)
class AtomicPairParams:
    omega_e: float = 0.5
    r_max: float = 1.0
    r_min: float = 0.02
    theta_max: float = np.pi / 2
    V0: float = 3.0
    V1: float = 1.5
    V2: float = 0.5
    V3: float = 2.5
    epsilon: float = 5e-4
    hbar: float = 1.0

    def __post_init__(self):
        if not self.r_min > 0:
            raise ValueError("r_min must be positive")

    @classmethod
    def weak(cls, **kw):
        return cls(**kw)

    @classmethod
    def strong(cls, **kw):
        base = dict(omega_e=1.5, r_min=0.5, epsilon=1.6e-2)
        base.update(kw)
        return cls(**base)


def atomic_controls(p, s):
    s = as_grid(s)
    r = p.r_max + (p.r_min - p.r_max) * np.exp(-25.0 * (s - 0.5) ** 2)
    theta = p.theta_max * np.sin(np.pi * s)
    phi = 2 * np.pi * s
    return r, theta, phi


def atomic_coupling(p):
    """Coupling operator V (without epsilon) in the S-major product basis."""
    up = 0.5 * (I2 + SZ)
    down = 0.5 * (I2 - SZ)
    return (
        p.V0 * np.kron(I2, up)
        + 2 * p.V0 * np.kron(I2, down)
        + p.V1 * np.kron(SX, up)
        + p.V2 * np.kron(SX, down)
        + p.V3 * np.kron(SX, SX)
    )


def atomic_coupling_e_major(p):
    """The same operator written with E as the major index, as a literal 4x4 table."""
    V0, V1, V2, V3 = p.V0, p.V1, p.V2, p.V3
    return np.array(
        [[V0, V1, 0, V3], [V1, V0, V3, 0], [0, V3, 2 * V0, V2], [V3, 0, V2, 2 * V0]],
        dtype=complex,
    )


# index permutation between the (e, s) and (s, e) orderings of two qubits
E_MAJOR_TO_S_MAJOR = np.array([0, 2, 1, 3])


def build_atomic_pair(p: AtomicPairParams) -> HamiltonianFamily:
    hbar = p.hbar

    def h_s(s):
        r, th, ph = atomic_controls(p, s)
        omega, delta = r * np.sin(th), r * np.cos(th)
        h = np.zeros((r.size, 2, 2), dtype=complex)
        h[:, 0, 1] = 0.5 * hbar * omega * np.exp(1j * ph)
        h[:, 1, 0] = 0.5 * hbar * omega * np.exp(-1j * ph)
        h[:, 1, 1] = hbar * delta
        return h

    def analytic_s(s):
        r, th, ph = atomic_controls(p, s)
        mu = np.stack([0.5 * hbar * r * (np.cos(th) - 1), 0.5 * hbar * r * (np.cos(th) + 1)], axis=-1)
        c, sn = np.cos(th / 2), np.sin(th / 2)
        z = np.zeros((r.size, 2, 2), dtype=complex)
        z[:, 0, 0] = -c
        z[:, 1, 0] = np.exp(-1j * ph) * sn
        z[:, 0, 1] = np.exp(1j * ph) * sn
        z[:, 1, 1] = c
        return mu, z

    he = np.diag([0.0, hbar * p.omega_e]).astype(complex)

    def analytic_e(s):
        n = as_grid(s).size
        return (
            np.broadcast_to(np.array([0.0, hbar * p.omega_e]), (n, 2)),
            np.broadcast_to(np.eye(2, dtype=complex), (n, 2, 2)),
        )

    return HamiltonianFamily(
        dim_s=2,
        dim_e=2,
        h_s=h_s,
        h_e=_constant(he),
        v=_constant(atomic_coupling(p)),
        epsilon=p.epsilon,
        hbar=hbar,
        closed=True,
        h_e_constant=True,
        v_constant=True,
        analytic_s=analytic_s,
        analytic_e=analytic_e,
        labels_s=("0", "1"),
        labels_e=("0", "1"),
        name="atomic_pair",
        info={"params": p},
    )


# ---------------------------------------------------------------- spin chain

# Table of the coupling number n for the eight N=3 half-chain states.
N_ALPHA = {
    "(111)": Fraction(-1),
    "(110)-2(101)+(011)": Fraction(-2, 3),
    "(110)+(101)+(011)": Fraction(-1, 3),
    "(110)-(011)": Fraction(0),
    "(100)-(001)": Fraction(0),
    "(100)+(010)+(001)": Fraction(1, 3),
    "(100)-2(010)+(001)": Fraction(2, 3),
    "(000)": Fraction(1),
}

HALF_CHAIN_LABELS = tuple(reversed(list(N_ALPHA)))  # (000) first


def n_alpha(label):
    """Coupling number of a half-chain state; pairs "l|r" give n_l + n_r."""
    if "|" in label:
        left, right = label.split("|")
        return n_alpha(left) + n_alpha(right)
    try:
        return N_ALPHA[label.replace(" ", "")]
    except KeyError:
        raise KeyError(f"unknown half-chain label {label!r}") from None


_TERM = re.compile(r"([+-]?)(\d*)\(([01]+)\)")


def label_vector(label):
    """Normalised computational-basis vector for a label such as "(100)-2(010)+(001)".

    Bit 0 is spin up (the lower Zeeman level); the first digit is site 1.
    """
    label = label.replace(" ", "")
    terms = _TERM.findall(label)
    if not terms or "".join(sign + num + f"({bits})" for sign, num, bits in terms) != label:
        raise KeyError(f"cannot parse label {label!r}")
    nbits = len(terms[0][2])
    vec = np.zeros(2**nbits, dtype=complex)
    for sign, num, bits in terms:
        coef = float(num) if num else 1.0
        vec[int(bits, 2)] += -coef if sign == "-" else coef
    return vec / np.linalg.norm(vec)


@dataclass(frozen=True)
class SpinChainParams:
    omega_e: float = 2.0
    B0: float = 1.0
    Bmin: float = 1e-2
    J: float = 2e-3
    N: int = 3
    delta_s: float = 0.1
    hbar: float = 1.0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if 2 * self.N + 1 > 9:
            raise ValueError(f"dimension 2^{2 * self.N + 1} exceeds the cap 2^9")

    @classmethod
    def weak(cls, **kw):
        return cls(**kw)

    @classmethod
    def strong(cls, **kw):
        base = dict(Bmin=0.67, J=2e-2)
        base.update(kw)
        return cls(**base)


def chain_controls(p, s):
    s = as_grid(s)
    b = p.B0 * (1 - np.exp(-((s - 0.5) ** 2) / p.delta_s**2)) + p.Bmin
    theta = np.pi * (1 - np.sin(np.pi * s))
    phi = 2 * np.pi * s
    return b, theta, phi


def _site_op(op, site, n):
    out = np.ones((1, 1), dtype=complex)
    for k in range(n):
        out = np.kron(out, op if k == site else I2)
    return out


def half_chain_hamiltonian(p):
    n = p.N
    spin = [0.5 * p.hbar * m for m in (SX, SY, SZ)]
    h = np.zeros((2**n, 2**n), dtype=complex)
    for k in range(n):
        h += -0.5 * p.omega_e * _site_op(spin[2], k, n)
    for k in range(n - 1):
        for op in spin:
            h += -p.J * _site_op(op, k, n) @ _site_op(op, k + 1, n)
    return h


def chain_coupling(p):
    """-S . (S_left_inner + S_right_inner) on H_S (x) H_El (x) H_Er, without J."""
    n = p.N
    spin = [0.5 * p.hbar * m for m in (SX, SY, SZ)]
    eye_half = np.eye(2**n)
    v = np.zeros((2 ** (2 * n + 1),) * 2, dtype=complex)
    for op in spin:
        left = np.kron(_site_op(op, n - 1, n), eye_half)
        right = np.kron(eye_half, _site_op(op, 0, n))
        v -= np.kron(op, left + right)
    return v


def half_chain_frame(p):
    """Eigenvalues, eigenvector columns and labels of one half chain."""
    hc = half_chain_hamiltonian(p)
    if p.N == 3:
        vecs = np.stack([label_vector(lb) for lb in HALF_CHAIN_LABELS], axis=1)
        vals = np.real(np.einsum("ij,ik,kj->j", vecs.conj(), hc, vecs))
        return vals, vecs, HALF_CHAIN_LABELS
    vals, vecs = np.linalg.eigh(hc)
    return vals, vecs, tuple(str(k) for k in range(vals.size))


def build_spin_chain(p: SpinChainParams) -> HamiltonianFamily:
    hbar = p.hbar

    def h_s(s):
        b, th, ph = chain_controls(p, s)
        bx, by, bz = b * np.sin(th) * np.cos(ph), b * np.sin(th) * np.sin(ph), b * np.cos(th)
        h = np.zeros((b.size, 2, 2), dtype=complex)
        h[:, 0, 0] = bz
        h[:, 1, 1] = -bz
        h[:, 0, 1] = bx - 1j * by
        h[:, 1, 0] = bx + 1j * by
        return 0.5 * hbar * h

    def analytic_s(s):
        b, th, ph = chain_controls(p, s)
        mu = np.stack([-0.5 * hbar * b, 0.5 * hbar * b], axis=-1)
        c, sn = np.cos(th / 2), np.sin(th / 2)
        z = np.zeros((b.size, 2, 2), dtype=complex)
        z[:, 0, 0] = -sn
        z[:, 1, 0] = np.exp(1j * ph) * c
        z[:, 0, 1] = np.exp(-1j * ph) * c
        z[:, 1, 1] = sn
        return mu, z

    hc = half_chain_hamiltonian(p)
    eye_half = np.eye(2**p.N)
    he = np.kron(hc, eye_half) + np.kron(eye_half, hc)
    vals, vecs, labels = half_chain_frame(p)
    nu = (vals[:, None] + vals[None, :]).ravel()
    xi = np.kron(vecs, vecs)
    pair_labels = tuple(f"{a}|{b}" for a in labels for b in labels)

    def analytic_e(s):
        n = as_grid(s).size
        return np.broadcast_to(nu, (n, nu.size)), np.broadcast_to(xi, (n,) + xi.shape)

    return HamiltonianFamily(
        dim_s=2,
        dim_e=4**p.N,
        h_s=h_s,
        h_e=_constant(he),
        v=_constant(chain_coupling(p)),
        epsilon=p.J,
        hbar=hbar,
        closed=True,
        h_e_constant=True,
        v_constant=True,
        analytic_s=analytic_s,
        analytic_e=analytic_e,
        labels_s=("0", "1"),
        labels_e=pair_labels,
        name="spin_chain",
        info={"params": p, "half_chain_labels": labels},
    )


def chain_label_index(family, left, right):
    return family.labels_e.index(f"{left}|{right}")


def random_family(seed, dim_s=3, dim_e=3, epsilon=1e-2, drift=True, e_drift=True):
    """Smooth random family used by the property and scaling suites.

    H_S(s) = A0 + s A1 + sin(2 pi s) A2 with unit level spacing, H_E(s)
    with spacing 3.1 so no S transition comes near an E transition, and a random Hermitian coupling that may rotate with s.
    """
    rng = np.random.default_rng(seed)

    def herm(n, scale=1.0):
        m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        return scale * 0.5 * (m + m.conj().T)

    s_base = np.diag(np.arange(dim_s, dtype=float) * 1.0) + herm(dim_s, 0.08)
    s_a1, s_a2 = herm(dim_s, 0.1), herm(dim_s, 0.1)
    e_base = np.diag(np.arange(dim_e, dtype=float) * 3.1 + 0.4) + herm(dim_e, 0.08)
    e_a1 = herm(dim_e, 0.1)
    v0, v1 = herm(dim_s * dim_e, 0.5), herm(dim_s * dim_e, 0.15)

    def h_s(s):
        s = as_grid(s)[:, None, None]
        return s_base + (s * s_a1 + np.sin(2 * np.pi * s) * s_a2 if drift else 0 * s)

    def h_e(s):
        s = as_grid(s)[:, None, None]
        return e_base + (np.sin(np.pi * s) * e_a1 if e_drift else 0 * s)

    def v(s):
        s = as_grid(s)[:, None, None]
        return v0 + np.cos(np.pi * s) * v1

    return HamiltonianFamily(
        dim_s=dim_s,
        dim_e=dim_e,
        h_s=h_s,
        h_e=h_e,
        v=v,
        epsilon=float(epsilon),
        h_e_constant=not e_drift,
        labels_s=tuple(str(k) for k in range(dim_s)),
        labels_e=tuple(str(k) for k in range(dim_e)),
        name=f"random{seed}",
    )


def crossing_family(epsilon=5e-2, aleph=4.0, s_star=0.5, mu_gap=1.0, seed=3, x_diag=(0.6, -0.4)):
    """Two-level E crossing nu_1 - nu_0 = aleph (s - s_star) under a constant qubit H_S.

    The coupling is V = V_S (x) 1 + W (x) sigma_z + diag(x) (x) sigma_x. The
    branch-connecting part is diagonal in the S eigenbasis, so the first-order
    branch overlap tau vanishes and the post-crossing mixture is convex (purity
    bounded by one). W gives the two branches different S dynamics.
    ``info["v_cross"][a]`` is the branch-connecting element for S level a.
    """
    rng = np.random.default_rng(seed)

    def herm(scale):
        m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        return scale * 0.5 * (m + m.conj().T)

    v_s, w = herm(0.5), herm(0.5)
    x = np.diag(np.asarray(x_diag, dtype=complex))
    h_s = np.diag([0.0, mu_gap]).astype(complex)
    v = np.kron(v_s, I2) + np.kron(w, SZ) + np.kron(x, SX)

    def h_e(s):
        d = 0.5 * aleph * (as_grid(s) - s_star)
        h = np.zeros((d.size, 2, 2), dtype=complex)
        h[:, 0, 0] = -d
        h[:, 1, 1] = d
        return h

    def analytic_s(s):
        n = as_grid(s).size
        return np.broadcast_to(np.array([0.0, mu_gap]), (n, 2)), np.broadcast_to(np.eye(2, dtype=complex), (n, 2, 2))

    def analytic_e(s):
        d = 0.5 * aleph * (as_grid(s) - s_star)
        return np.stack([-d, d], axis=-1), np.broadcast_to(np.eye(2, dtype=complex), (d.size, 2, 2))

    return HamiltonianFamily(
        dim_s=2,
        dim_e=2,
        h_s=_constant(h_s),
        h_e=h_e,
        v=_constant(v),
        epsilon=float(epsilon),
        v_constant=True,
        analytic_s=analytic_s,
        analytic_e=analytic_e,
        labels_s=("0", "1"),
        labels_e=("0", "1"),
        name="crossing",
        info={"aleph": aleph, "s_star": s_star, "v_cross": np.asarray(x_diag, dtype=float)},
    )
