"""Dense complex linear algebra used throughout the package.

All routines accept single matrices or stacks with a leading batch axis.
Tensor products use the S-major convention: for ``kron(A_S, B_E)`` the
composite index is ``i_S * dim_E + i_E``.
"""

import numpy as np
import scipy.linalg


class DimensionError(ValueError):
    pass


class NotHermitianError(ValueError):
    pass


def dagger(m):
    return np.conj(np.swapaxes(m, -1, -2))


def _max_abs(m):
    return float(np.max(np.abs(m))) if np.size(m) else 0.0


def tensor_product(a, b):
    """Kronecker product, batched over leading axes."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim == 2 and b.ndim == 2:
        return np.kron(a, b)
    out = np.einsum("...ij,...kl->...ikjl", a, b)
    shape = out.shape[:-4] + (a.shape[-2] * b.shape[-2], a.shape[-1] * b.shape[-1])
    return out.reshape(shape)


def partial_trace_env(rho, dim_s, dim_e):
    """Trace out the E factor of an operator on H_S (x) H_E."""
    rho = np.asarray(rho)
    n = dim_s * dim_e
    if rho.shape[-1] != n or rho.shape[-2] != n:
        raise DimensionError(
            f"operator of shape {rho.shape[-2:]} does not match dim_S*dim_E = {n}"
        )
    r = rho.reshape(rho.shape[:-2] + (dim_s, dim_e, dim_s, dim_e))
    return np.einsum("...iaja->...ij", r)


def partial_trace_vector(psi, dim_s, dim_e):
    """tr_E |psi><psi| for state vectors (batched), without forming the projector."""
    psi = np.asarray(psi)
    if psi.shape[-1] != dim_s * dim_e:
        raise DimensionError(f"vector length {psi.shape[-1]} != {dim_s * dim_e}")
    m = psi.reshape(psi.shape[:-1] + (dim_s, dim_e))
    return m @ dagger(m)


def partial_trace_outer(psi, chi, dim_s, dim_e):
    """tr_E |psi><chi| for a pair of vectors (batched)."""
    m = np.asarray(psi).reshape(np.shape(psi)[:-1] + (dim_s, dim_e))
    k = np.asarray(chi).reshape(np.shape(chi)[:-1] + (dim_s, dim_e))
    return m @ dagger(k)


def adjoint_action(u, rho):
    """Ad[U] rho = U rho U^dagger."""
    u = np.asarray(u)
    rho = np.asarray(rho)
    if u.shape[-1] != rho.shape[-2] or rho.shape[-1] != u.shape[-1]:
        raise DimensionError(f"cannot conjugate {rho.shape[-2:]} by {u.shape[-2:]}")
    return u @ rho @ dagger(u)


def mixed_adjoint_action(u_left, tau, u_right):
    """U_left tau U_right^dagger."""
    return np.asarray(u_left) @ np.asarray(tau) @ dagger(u_right)


def hermitian_eigen(h, herm_tol=1e-10):
    """Eigenvalues (ascending) and orthonormal eigenvector columns of a Hermitian matrix."""
    h = np.asarray(h)
    dev = _max_abs(h - dagger(h))
    if dev > herm_tol * max(1.0, _max_abs(h)):
        raise NotHermitianError(f"matrix is not Hermitian (max deviation {dev:.3e})")
    return np.linalg.eigh(h)


def expm_antihermitian(a, tol=1e-10):
    """exp(A) for anti-Hermitian A through the spectral decomposition of iA."""
    a = np.asarray(a)
    dev = _max_abs(a + dagger(a))
    if dev > tol * max(1.0, _max_abs(a)):
        raise NotHermitianError(f"generator is not anti-Hermitian (max deviation {dev:.3e})")
    h = 1j * a
    h = 0.5 * (h + dagger(h))
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w)[..., None, :]) @ dagger(v)


def nearest_unitary(u):
    """Unitary polar factor of ``u`` (batched); removes accumulated rounding drift."""
    w, _, vh = np.linalg.svd(np.asarray(u))
    return w @ vh


def expm_general(a):
    """exp(A) for arbitrary square A (scaling and squaring, batched)."""
    return scipy.linalg.expm(np.asarray(a, dtype=complex))


def pseudo_inverse(rho, kernel_tol=1e-10):
    """Pseudo-inverse of a Hermitian positive semi-definite matrix.

    Eigenvalues below ``kernel_tol`` are treated as kernel, so that
    rho @ pinv = 1 - P_ker.
    """
    rho = np.asarray(rho)
    h = 0.5 * (rho + dagger(rho))
    w, v = np.linalg.eigh(h)
    keep = w > kernel_tol
    inv = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    return (v * inv[..., None, :]) @ dagger(v)


def kernel_projector(rho, kernel_tol=1e-10):
    h = 0.5 * (rho + dagger(rho))
    w, v = np.linalg.eigh(h)
    drop = (w <= kernel_tol).astype(float)
    return (v * drop[..., None, :]) @ dagger(v)


def ordered_products(steps, forward=True):
    """Cumulative ordered products of step matrices.

    For ``forward`` the k-th output is ``S_{k-1} ... S_1 S_0`` (new factors on
    the left), otherwise ``S_0 S_1 ... S_{k-1}``. Output has one more entry than
    ``steps`` and starts at the identity.
    """
    steps = np.asarray(steps)
    n, d = steps.shape[0], steps.shape[-1]
    out = np.empty((n + 1, d, d), dtype=np.result_type(steps.dtype, complex))
    cur = np.eye(d, dtype=out.dtype)
    out[0] = cur
    for k in range(n):
        cur = steps[k] @ cur if forward else cur @ steps[k]
        out[k + 1] = cur
    return out


def block_products(steps, block, forward=True):
    """Products of consecutive groups of ``block`` step matrices.

    Uses a pairwise tree reduction so the work is vectorised; the number of
    steps must be a multiple of ``block``.
    """
    steps = np.asarray(steps)
    n, d = steps.shape[0], steps.shape[-1]
    if n % block:
        raise DimensionError(f"{n} steps are not a multiple of block size {block}")
    x = steps.reshape(n // block, block, d, d)
    while x.shape[1] > 1:
        if x.shape[1] % 2:
            eye = np.broadcast_to(np.eye(d, dtype=x.dtype), (x.shape[0], 1, d, d))
            x = np.concatenate([x, eye], axis=1)
        early, late = x[:, 0::2], x[:, 1::2]
        x = late @ early if forward else early @ late
    return x[:, 0]


def hermitian_part(m):
    return 0.5 * (m + dagger(m))


def antihermitian_part(m):
    return 0.5 * (m - dagger(m))


def check_density(rho, herm_tol=1e-9, trace_tol=1e-9, pos_tol=1e-9):
    """Return (hermiticity deviation, trace deviation, most negative eigenvalue) maxima."""
    rho = np.asarray(rho)
    herm = _max_abs(rho - dagger(rho))
    tr = np.trace(rho, axis1=-2, axis2=-1)
    trdev = _max_abs(tr - 1.0)
    w = np.linalg.eigvalsh(hermitian_part(rho))
    neg = float(max(0.0, -np.min(w)))
    ok = herm <= herm_tol and trdev <= trace_tol and neg <= pos_tol
    return ok, {"hermiticity": herm, "trace": trdev, "negativity": neg}
