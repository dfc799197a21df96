"""Continuity-tracked, gauge-fixed eigenframes on a reduced-time grid."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .linalg import dagger, hermitian_eigen

GAUGES = ("pivot-real", "parallel-transport", "analytic")


class DegeneracyError(RuntimeError):
    def __init__(self, s, message="ambiguous eigenvector matching"):
        super().__init__(f"{message} at s={s:.12g}")
        self.s = float(s)


@dataclass(frozen=True)
class Grid:
    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("grid needs at least two points")
        if p[0] != 0.0 or p[-1] != 1.0:
            raise ValueError("grid must start at 0 and end at 1")
        if np.any(np.diff(p) <= 0):
            raise ValueError("grid must be strictly increasing")
        object.__setattr__(self, "points", p)

    @classmethod
    def uniform(cls, count):
        return cls(np.linspace(0.0, 1.0, int(count)))

    @property
    def count(self):
        return self.points.size

    @property
    def midpoints(self):
        return 0.5 * (self.points[1:] + self.points[:-1])

    @property
    def steps(self):
        return np.diff(self.points)


@dataclass
class EigenFrame:
    """Eigenvalues ``values[k, j]`` and eigenvector columns ``vectors[k, :, j]``.

    Column j carries label ``labels[j]`` at every grid point. A constant frame
    stores a single slice (leading axis of length 1) that broadcasts over the grid.
    """

    grid: Grid
    values: np.ndarray
    vectors: np.ndarray
    gauge: str
    labels: tuple = ()
    constant: bool = False
    _derivative: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dim(self):
        return self.values.shape[-1]

    def at(self, k):
        i = 0 if self.constant else k
        return self.values[i], self.vectors[i]

    def projectors(self):
        v = self.vectors
        return np.einsum("kij,klj->kjil", v, v.conj())


def _pivot_phase(vectors, pivots, prev=None, floor=1e-8):
    """Unit phases making the pivot components real positive (per column)."""
    d = vectors.shape[-1]
    comp = vectors[..., pivots, np.arange(d)]
    mag = np.abs(comp)
    with np.errstate(invalid="ignore", divide="ignore"):
        ph = np.where(mag > floor, np.conj(comp) / np.where(mag > floor, mag, 1.0), 1.0)
    return ph, mag > floor


def _align(prev, cur):
    """Phases making <prev_j|cur_j> real positive."""
    ov = np.einsum("ij,ij->j", prev.conj(), cur)
    mag = np.abs(ov)
    return np.where(mag > 0, np.conj(ov) / np.where(mag > 0, mag, 1.0), 1.0)


def _match_permutations(vecs, s, ambiguity=1e-6):
    """Label permutation per point from max-overlap matching of consecutive sorted frames."""
    n, d = vecs.shape[0], vecs.shape[-1]
    perms = np.empty((n, d), dtype=int)
    perms[0] = np.arange(d)
    if n == 1:
        return perms
    ov = np.abs(np.einsum("kij,kil->kjl", vecs[:-1].conj(), vecs[1:]))
    best = np.argmax(ov, axis=2)
    part = np.sort(ov, axis=2)
    ambiguous = (part[..., -1] - part[..., -2] < ambiguity) if d > 1 else np.zeros((n - 1, d), bool)
    identity = np.all(best == np.arange(d), axis=1) & ~np.any(ambiguous, axis=1)
    cur = perms[0].copy()
    for k in range(n - 1):
        if not identity[k]:
            if np.any(ambiguous[k]):
                raise DegeneracyError(s[k + 1])
            m = best[k]
            if np.unique(m).size != d:
                raise DegeneracyError(s[k + 1], "eigenvector matching is not a permutation")
            cur = m[cur]
        perms[k + 1] = cur
    return perms


def track_eigensystem(
    evaluator: Callable,
    grid: Grid,
    gauge: str = "pivot-real",
    analytic: Optional[Callable] = None,
    constant: bool = False,
    herm_tol: float = 1e-10,
    ambiguity: float = 1e-6,
    chunk: int = 4096,
):
    """Eigenframe of a Hermitian matrix family along ``grid``.

    ``evaluator(s_array)`` returns a stack of matrices. Labels follow maximal
    overlap with the previous point rather than energy order. With
    ``gauge="analytic"`` the closed form from ``analytic`` is used verbatim.
    """
    if gauge not in GAUGES:
        raise ValueError(f"unknown gauge {gauge!r}; expected one of {GAUGES}")
    s = grid.points
    if gauge == "analytic":
        if analytic is None:
            raise ValueError("analytic gauge requires closed-form eigenpairs")
        pts = s[:1] if constant else s
        vals, vecs = analytic(pts)
        vals = np.array(vals, dtype=float)
        vecs = np.array(vecs, dtype=complex)
        if constant:
            vals, vecs = vals[:1], vecs[:1]
        return EigenFrame(grid, vals, vecs, gauge, tuple(range(vals.shape[-1])), constant)

    if constant:
        h = np.asarray(evaluator(s[:1]))
        w, v = hermitian_eigen(h, herm_tol)
        pivots = np.argmax(np.abs(v[0]), axis=0)
        ph, _ = _pivot_phase(v, pivots)
        v = v * ph[..., None, :]
        return EigenFrame(grid, w, v, gauge, tuple(range(w.shape[-1])), True)

    ws, vs = [], []
    for start in range(0, s.size, chunk):
        h = np.asarray(evaluator(s[start : start + chunk]))
        w, v = hermitian_eigen(h, herm_tol)
        ws.append(w)
        vs.append(v)
    w = np.concatenate(ws)
    v = np.concatenate(vs)
    perms = _match_permutations(v, s, ambiguity)
    if np.any(perms != perms[0]):
        w = np.take_along_axis(w, perms, axis=1)
        v = np.take_along_axis(v, perms[:, None, :], axis=2)

    d = w.shape[-1]
    if gauge == "pivot-real":
        pivots = np.argmax(np.abs(v[0]), axis=0)
        ph, ok = _pivot_phase(v, pivots)
        v = v * ph[:, None, :]
        bad = np.argwhere(~ok)
        for k, j in bad:
            # pivot vanishes: continue the phase from the previous points instead
            if k == 0:
                continue
            ref = v[k - 1, :, j] if k < 2 else 2 * v[k - 1, :, j] - v[k - 2, :, j]
            ov = np.vdot(ref, v[k, :, j])
            if abs(ov) > 0:
                v[k, :, j] *= np.conj(ov) / abs(ov)
    else:
        pivots = np.argmax(np.abs(v[0]), axis=0)
        ph0, _ = _pivot_phase(v[:1], pivots)
        v[0] = v[0] * ph0[0][None, :]
        for k in range(1, s.size):
            v[k] = v[k] * _align(v[k - 1], v[k])[None, :]
    return EigenFrame(grid, w, v, gauge, tuple(range(d)), False)


def frame_derivative(frame: EigenFrame):
    """d/ds of the eigenvector columns: second-order central differences, one-sided at the ends."""
    if frame._derivative is not None:
        return frame._derivative
    if frame.constant:
        der = np.zeros_like(frame.vectors)
    else:
        if frame.grid.count < 3:
            raise ValueError("derivative needs at least three grid points")
        der = np.gradient(frame.vectors, frame.grid.points, axis=0, edge_order=2)
    frame._derivative = der
    return der


def berry_connection(frame: EigenFrame):
    """Matrix <v_b|v_c'> per grid point."""
    der = frame_derivative(frame)
    return np.einsum("kib,kic->kbc", frame.vectors.conj(), der)


@dataclass(frozen=True)
class CrossingEvent:
    s_star: float
    labels: tuple
    min_gap: float
    slope_aleph: float


def detect_crossings(frame: EigenFrame, gap_tol: float):
    """Local minima of every pairwise level gap that fall below ``gap_tol``.

    The slope is a linear fit of the signed gap over the five nearest points;
    ``s_star`` is the root of that fit.
    """
    if frame.constant:
        vals = np.broadcast_to(frame.values, (frame.grid.count, frame.dim))
    else:
        vals = frame.values
    s = frame.grid.points
    events = []
    d = vals.shape[-1]
    for i in range(d):
        for j in range(i + 1, d):
            diff = vals[:, j] - vals[:, i]
            gap = np.abs(diff)
            interior = (gap[1:-1] <= gap[:-2]) & (gap[1:-1] < gap[2:])
            cands = list(np.nonzero(interior)[0] + 1)
            for end in (0, s.size - 1):
                nb = 1 if end == 0 else s.size - 2
                if gap[end] < gap[nb]:
                    cands.append(end)
            for k in cands:
                if gap[k] >= gap_tol:
                    continue
                lo = max(0, min(k - 2, s.size - 5))
                sl = slice(lo, lo + 5)
                slope, icpt = np.polyfit(s[sl], diff[sl], 1)
                s_star = -icpt / slope if slope != 0 else float(s[k])
                events.append(CrossingEvent(float(s_star), (frame.labels[i], frame.labels[j]), float(gap[k]), float(slope)))
    events.sort(key=lambda e: e.s_star)
    return events


def check_frame(frame: EigenFrame, evaluator, sample=None):
    """Max eigen residual (relative), orthonormality defect and min adjacent overlap."""
    s = frame.grid.points
    idx = np.arange(s.size) if sample is None else np.asarray(sample)
    h = np.asarray(evaluator(s[idx] if not frame.constant else s[:1]))
    v = frame.vectors[idx] if not frame.constant else frame.vectors
    w = frame.values[idx] if not frame.constant else frame.values
    res = np.linalg.norm(h @ v - v * w[:, None, :], axis=1).max()
    scale = max(1.0, float(np.abs(h).max()))
    orth = np.abs(dagger(v) @ v - np.eye(v.shape[-1])).max()
    if frame.constant or s.size < 2:
        cont = 1.0
    else:
        ov = np.abs(np.einsum("kij,kij->kj", frame.vectors[:-1].conj(), frame.vectors[1:]))
        cont = float(ov.min())
    return {"residual": float(res / scale), "orthonormality": float(orth), "continuity": cont}
