"""Dense matrix helpers and a one-sided Jacobi SVD.

Matrices are plain 2-D ``float64`` numpy arrays. :func:`as_matrix` is the
single validation gate used by the rest of the package.
"""

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import InvalidInputError, NumericalFailure, ShapeError

SVD_TOL = 1e-12
SWEEPS_PER_DIM = 100


def as_matrix(m, name="matrix", dtype=np.float64):
    """Return ``m`` as a finite 2-D float array, raising on anything else."""
    arr = np.asarray(m, dtype=dtype)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SvdFactors:
    """``m == u @ diag_rect(s, a, b) @ v`` with ``u`` (a x a) and ``v`` (b x b)."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    sweeps: int = 0

    def __post_init__(self):
        object.__setattr__(self, "u", _frozen(self.u))
        object.__setattr__(self, "s", _frozen(self.s))
        object.__setattr__(self, "v", _frozen(self.v))

    @property
    def shape(self):
        return self.u.shape[0], self.v.shape[0]


def matmul(a, b):
    """Dense product ``a @ b`` with a shape check that names both operands."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def diag_rect(s, a, b):
    """Embed the vector ``s`` on the main diagonal of an a x b zero matrix."""
    s = np.asarray(s, dtype=np.float64)
    k = min(a, b)
    if s.shape != (k,):
        raise ShapeError(f"diagonal of length {s.shape} does not fit a {a}x{b} rectangle")
    out = np.zeros((a, b))
    out[np.arange(k), np.arange(k)] = s
    return out


def frobenius_norm(m):
    m = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(m * m)))


def max_abs_diff(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


def _complete_basis(q, a):
    """Extend the orthonormal columns of ``q`` (a x k) to an a x a orthogonal matrix.

    Pivoted Gram-Schmidt over the standard basis, projected twice.
    """
    k = q.shape[1]
    if k == a:
        return q
    basis = np.empty((a, a))
    basis[:, :k] = q
    cand = np.eye(a)
    for _ in range(2):
        cand -= basis[:, :k] @ (basis[:, :k].T @ cand)
    for col in range(k, a):
        norms = np.einsum("ij,ij->j", cand, cand)
        j = int(np.argmax(norms))
        vec = cand[:, j] / np.sqrt(norms[j])
        for _ in range(2):
            vec -= basis[:, :col] @ (basis[:, :col].T @ vec)
            vec /= np.linalg.norm(vec)
        basis[:, col] = vec
        cand -= np.outer(vec, vec @ cand)
        cand[:, j] = 0.0
    return basis


def _svd_tall(m):
    a, b = m.shape
    work = np.array(m, dtype=np.float64, order="F")
    rot = np.eye(b, order="F")
    cap = SWEEPS_PER_DIM * b
    sweeps = _backend.kernels.jacobi_sweeps(work, rot, SVD_TOL, cap)
    if sweeps < 0:
        raise NumericalFailure(f"Jacobi SVD did not converge after {cap} sweeps", iterations=cap)

    s = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    work = work[:, order]
    rot = rot[:, order]

    # Columns with negligible norm carry no direction; rebuild them by completion.
    smax = s[0] if b else 0.0
    rank = int(np.sum(s > smax * max(a, b) * np.finfo(float).eps)) if smax > 0 else 0
    u = _complete_basis(work[:, :rank] / s[:rank], a)

    # Largest-magnitude entry of each left vector is made nonnegative.
    pivot = u[np.argmax(np.abs(u), axis=0), np.arange(a)]
    sign = np.where(pivot < 0, -1.0, 1.0)
    u = u * sign
    v = rot.T * sign[:b, None]
    return u, s, v, sweeps


def svd(m):
    """Full singular value decomposition by one-sided Jacobi rotations.

    Returns :class:`SvdFactors` with ``s`` descending and ``v`` already
    transposed, so ``reconstruct(svd(m))`` recovers ``m``. Wide inputs are
    handled through their transpose.
    """
    m = as_matrix(m, "svd input")
    a, b = m.shape
    if a >= b:
        u, s, v, sweeps = _svd_tall(m)
        return SvdFactors(u, s, v, sweeps)
    ut, s, vt, sweeps = _svd_tall(m.T)
    # m.T = ut S vt  =>  m = vt.T S.T ut.T
    u, v = vt.T, ut.T
    pivot = u[np.argmax(np.abs(u), axis=0), np.arange(a)]
    sign = np.where(pivot < 0, -1.0, 1.0)
    u = u * sign
    v = v.copy()
    v[:a] *= sign[:, None]
    return SvdFactors(u, s, v, sweeps)


def reconstruct(f):
    """``u @ diag_rect(s) @ v``."""
    a, b = f.u.shape[0], f.v.shape[0]
    if f.u.shape != (a, a) or f.v.shape != (b, b):
        raise ShapeError(f"inconsistent factor shapes u{f.u.shape} v{f.v.shape}")
    return matmul(matmul(f.u, diag_rect(f.s, a, b)), f.v)
