"""Learnable singular-value increments and their band-diagonal expansion.

A weight ``m`` (a x b, a >= b) factors as ``u @ diag_rect(s) @ v``. The band
increment is a ``(2n + 1) x b`` tensor; row ``r`` is the diagonal at offset
``o = r - n`` and its column ``j`` entry sits at ``(j + o, j)`` of the a x b
singular-value rectangle. Placements that fall outside the rectangle are
dropped and receive zero gradient. With ``n = 0`` the band is a plain vector
added to the singular values.
"""

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import InvalidInputError, ShapeError, UnsupportedShapeError
from .numerics import as_matrix, diag_rect, matmul
from .quantizer import compute_params, quantize

HEADROOM_CAP = 1e30


@dataclass
class BandIncrement:
    n_diag: int
    b: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if self.n_diag < 0 or self.b < 1:
            raise ShapeError(f"invalid band geometry n_diag={self.n_diag}, b={self.b}")
        if vals.shape != (2 * self.n_diag + 1, self.b):
            raise ShapeError(
                f"band values must be {(2 * self.n_diag + 1, self.b)}, got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("band values must be finite")
        self.values = vals

    @classmethod
    def zeros(cls, n_diag, b):
        return cls(n_diag, b, np.zeros((2 * n_diag + 1, b)))

    def offsets(self):
        return np.arange(-self.n_diag, self.n_diag + 1)


def clamp_diagonals(n_diag, a, b):
    """Largest usable diagonal count for an a x b rectangle."""
    return max(0, min(int(n_diag), min(a, b) - 1))


def map_band(inc, a, b):
    """Dense a x b matrix holding the band increment at its mapped positions."""
    if inc.b != b:
        raise ShapeError(f"band has {inc.b} columns, target rectangle has {b}")
    if a < b:
        raise UnsupportedShapeError(f"band map needs a >= b, got a={a}, b={b}")
    return _backend.kernels.band_scatter(inc.values, a)


def band_support(a, b, n_diag):
    """Boolean a x b mask of positions reachable by a band of half-width n_diag."""
    l, j = np.indices((a, b))
    return np.abs(l - j) <= n_diag


def build_d(s, inc, a, b):
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (b,):
        raise ShapeError(f"need {b} singular values, got {s.shape}")
    return diag_rect(s, a, b) + map_band(inc, a, b)


def reconstruct_weight(u, d, v):
    """``u @ d @ v`` for the band-adjusted singular-value rectangle ``d``."""
    u, d, v = (np.asarray(t, dtype=np.float64) for t in (u, d, v))
    a, b = d.shape
    if u.shape != (a, a) or v.shape != (b, b):
        raise ShapeError(f"factor shapes u{u.shape} d{d.shape} v{v.shape} do not chain")
    return matmul(matmul(u, d), v)


def lsi_reconstruct(u, s, i, v):
    """Reconstruction with the increment vector ``i`` added to the singular values."""
    s = np.asarray(s, dtype=np.float64)
    i = np.asarray(i, dtype=np.float64)
    if s.shape != i.shape:
        raise ShapeError(f"increment {i.shape} does not match singular values {s.shape}")
    a, b = np.shape(u)[0], np.shape(v)[0]
    return reconstruct_weight(u, diag_rect(s + i, a, b), v)


def grad_band(upstream, u, v, n_diag):
    """Gradient of a scalar loss w.r.t. the band values given dL/dM'."""
    g = np.asarray(upstream, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if g.shape != (u.shape[0], v.shape[0]):
        raise ShapeError(f"upstream {g.shape} does not match factors u{u.shape} v{v.shape}")
    g_d = u.T @ g @ v.T
    return _backend.kernels.band_gather(g_d, n_diag)


@dataclass(frozen=True)
class ErrorMatrix:
    """Per-entry slack before an integer code changes, with quant params held fixed.

    ``headroom`` is the symmetric slack for in-range entries and the inward
    slack for clamped ones. ``down``/``up`` are the allowed perturbation
    magnitudes in each direction (outward slack of clamped entries is
    ``HEADROOM_CAP``).
    """

    headroom: np.ndarray
    saturated_mask: np.ndarray
    down: np.ndarray
    up: np.ndarray
    params: object
    cfg: object


def error_matrix(w, cfg, clip=None, params=None):
    w = as_matrix(w, "weight")
    p = params if params is not None else compute_params(w, cfg, clip)
    grid = cfg.grid(w.shape)
    scale = grid.expand(p.scale)
    zero = grid.expand(p.zero).astype(np.float64)
    deg = grid.expand(p.degenerate)
    L = cfg.qmax

    y = w / scale
    k = _backend.kernels.round_half_away(y)
    t = k + zero
    hi_sat = t > L
    lo_sat = t < 0
    inner = scale * (0.5 - np.abs(y - k))
    inward_hi = scale * (y - (L - zero - 0.5))
    inward_lo = scale * ((0.5 - zero) - y)

    headroom = np.where(hi_sat, inward_hi, np.where(lo_sat, inward_lo, inner))
    headroom = np.maximum(headroom, 0.0)
    down = np.where(lo_sat, HEADROOM_CAP, headroom)
    up = np.where(hi_sat, HEADROOM_CAP, headroom)

    saturated = hi_sat | lo_sat | deg
    headroom = np.where(deg, 0.0, headroom)
    down = np.where(deg, 0.0, down)
    up = np.where(deg, 0.0, up)
    return ErrorMatrix(headroom, saturated, down, up, p, cfg)


@dataclass(frozen=True)
class FeasibilityReport:
    n_feasible: int
    n_total: int
    max_violation: float
    all_feasible: bool
    perturbation: np.ndarray

    @property
    def fraction(self):
        return self.n_feasible / self.n_total


def perturbation(inc, f):
    a, b = f.u.shape[0], f.v.shape[0]
    return reconstruct_weight(f.u, map_band(inc, a, b), f.v)


def feasibility_check(m, inc, f, e):
    """How much of the band-induced weight perturbation stays within the headroom.

    An entry is feasible when its perturbation is zero or strictly inside
    ``(-down, up)``. When every entry is feasible the integer codes of ``m``
    are unchanged under the fixed quant params held in ``e``.
    """
    m = as_matrix(m, "weight")
    P = perturbation(inc, f)
    if P.shape != m.shape or e.headroom.shape != m.shape:
        raise ShapeError(f"shapes disagree: m{m.shape} P{P.shape} E{e.headroom.shape}")
    ok = (P == 0) | ((P > -e.down) & (P < e.up))
    excess = np.maximum(P - e.up, -e.down - P)
    excess = np.where(ok, 0.0, np.maximum(excess, 0.0))
    n_ok = int(ok.sum())
    return FeasibilityReport(n_ok, ok.size, float(excess.max()), n_ok == ok.size, P)


def codes_unchanged(m, P, e):
    """Brute re-quantization oracle: same codes for ``m`` and ``m + P``."""
    before = quantize(m, e.params, e.cfg).codes
    after = quantize(np.asarray(m) + P, e.params, e.cfg).codes
    return bool(np.array_equal(before, after))
