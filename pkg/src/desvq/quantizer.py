"""Uniform asymmetric fake quantization with learnable clipping.

Groups are rectangular blocks of the weight matrix. With weights stored as
``(in_dim, out_dim)``:

* ``per-tensor``  one block covering everything
* ``per-channel`` one block per column (``axis="cols"``, output channel) or per row
* ``group``       blocks of ``group_size`` consecutive input rows within each column

Per-group parameter arrays are shaped ``(row_blocks, col_blocks)``.

Gradients follow the straight-through rule: rounding is treated as identity
while the clamp to ``[clip_lo, clip_hi]`` is kept. Written out, the forward
value is ``clamp(w, lo, hi) + scale * rho`` where ``rho`` is the rounding
residual, held constant when differentiating.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import InvalidInputError, InvalidParamError, ShapeError
from .numerics import as_matrix

GRANULARITIES = ("per-tensor", "per-channel", "group")


@dataclass(frozen=True)
class QuantConfig:
    bits: int = 4
    granularity: str = "per-channel"
    axis: str = "cols"
    group_size: int | None = None

    def __post_init__(self):
        if not isinstance(self.bits, (int, np.integer)) or not 2 <= self.bits <= 16:
            raise InvalidParamError(f"bits must be an integer in [2, 16], got {self.bits!r}")
        if self.granularity not in GRANULARITIES:
            raise InvalidParamError(f"unknown granularity {self.granularity!r}")
        if self.axis not in ("rows", "cols"):
            raise InvalidParamError(f"per-channel axis must be 'rows' or 'cols', got {self.axis!r}")
        if self.granularity == "group" and (self.group_size is None or self.group_size < 1):
            raise InvalidParamError("group granularity needs a positive group_size")

    @property
    def qmax(self):
        return (1 << self.bits) - 1

    def grid(self, shape):
        return GroupGrid.for_config(self, shape)

    def to_dict(self):
        return {
            "bits": int(self.bits),
            "granularity": self.granularity,
            "axis": self.axis,
            "group_size": self.group_size,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["bits"]), d["granularity"], d.get("axis", "cols"), d.get("group_size"))


def _starts(n, size):
    return np.arange(0, n, size, dtype=np.intp)


@dataclass(frozen=True)
class GroupGrid:
    """Block partition of an ``(rows, cols)`` matrix into quantization groups."""

    shape: tuple
    row_starts: np.ndarray
    col_starts: np.ndarray
    ragged: bool = False

    @classmethod
    def for_config(cls, cfg, shape):
        rows, cols = shape
        if cfg.granularity == "per-tensor":
            rs, cs = _starts(rows, rows), _starts(cols, cols)
        elif cfg.granularity == "per-channel":
            if cfg.axis == "cols":
                rs, cs = _starts(rows, rows), _starts(cols, 1)
            else:
                rs, cs = _starts(rows, 1), _starts(cols, cols)
        else:
            rs, cs = _starts(rows, cfg.group_size), _starts(cols, 1)
        ragged = cfg.granularity == "group" and rows % cfg.group_size != 0
        return cls(tuple(shape), rs, cs, ragged)

    @property
    def dims(self):
        return len(self.row_starts), len(self.col_starts)

    @property
    def n_groups(self):
        return len(self.row_starts) * len(self.col_starts)

    @property
    def row_sizes(self):
        return np.diff(np.append(self.row_starts, self.shape[0]))

    @property
    def col_sizes(self):
        return np.diff(np.append(self.col_starts, self.shape[1]))

    def reduce(self, ufunc, x):
        return ufunc.reduceat(ufunc.reduceat(x, self.row_starts, axis=0), self.col_starts, axis=1)

    def expand(self, p):
        p = np.asarray(p)
        return np.repeat(np.repeat(p, self.row_sizes, axis=0), self.col_sizes, axis=1)

    def group_ids(self):
        r = np.repeat(np.arange(len(self.row_starts)), self.row_sizes)
        c = np.repeat(np.arange(len(self.col_starts)), self.col_sizes)
        return r[:, None] * len(self.col_starts) + c[None, :]

    def as_grid(self, v, name):
        v = np.asarray(v, dtype=np.float64)
        if v.size != self.n_groups:
            raise ShapeError(f"{name} has {v.size} entries, config induces {self.n_groups} groups")
        return v.reshape(self.dims)


@dataclass(frozen=True)
class ClipParams:
    """Per-group shrink factors in (0, 1] applied to the max (gamma) and min (beta)."""

    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=np.float64)
        b = np.asarray(self.beta, dtype=np.float64)
        if g.shape != b.shape:
            raise ShapeError(f"gamma {g.shape} and beta {b.shape} differ in shape")
        if np.any(~(g > 0)) or np.any(g > 1) or np.any(~(b > 0)) or np.any(b > 1):
            raise InvalidParamError("clip factors must lie in (0, 1]")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "beta", b)

    @classmethod
    def identity(cls, n_groups):
        return cls(np.ones(n_groups), np.ones(n_groups))

    @classmethod
    def from_logits(cls, gamma_logit, beta_logit):
        return cls(sigmoid(gamma_logit), sigmoid(beta_logit))


def sigmoid(x):
    # the clip keeps the result strictly inside (0, 1) for any finite logit
    x = np.clip(np.asarray(x, dtype=np.float64), -700.0, 700.0)
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class QuantParams:
    scale: np.ndarray
    zero: np.ndarray
    clip_lo: np.ndarray
    clip_hi: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.degenerate is None:
            object.__setattr__(self, "degenerate", np.zeros(np.shape(self.scale), dtype=bool))


@dataclass(frozen=True)
class IntCodes:
    codes: np.ndarray
    bits: int

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 2:
            raise ShapeError(f"codes must be 2-D, got shape {codes.shape}")
        if codes.size and (codes.min() < 0 or codes.max() > (1 << self.bits) - 1):
            raise InvalidInputError(f"codes outside [0, {(1 << self.bits) - 1}]")
        object.__setattr__(self, "codes", codes.astype(np.int64, copy=False))

    @property
    def shape(self):
        return self.codes.shape


def _identity_clip(grid):
    return np.ones(grid.dims), np.ones(grid.dims)


def _clip_grids(grid, clip):
    if clip is None:
        return _identity_clip(grid)
    return grid.as_grid(clip.gamma, "gamma"), grid.as_grid(clip.beta, "beta")


def _params_from_extremes(mx, mn, gamma, beta, qmax):
    hi = gamma * mx
    lo = beta * mn
    deg = ~(hi > lo)
    width = np.where(deg, 1.0, hi - lo)
    scale = np.where(deg, 1.0, width / qmax)
    zero = np.where(deg, 0.0, np.clip(_backend.kernels.round_half_away(-lo / scale), 0, qmax))
    return hi, lo, scale, zero, deg


def compute_params(w, cfg, clip=None):
    """Per-group scale and zero point from the (clipped) group extremes.

    The range always includes 0 so that the zero point lands inside the
    code range.
    """
    w = as_matrix(w, "weight")
    grid = cfg.grid(w.shape)
    gamma, beta = _clip_grids(grid, clip)
    mx = np.maximum(grid.reduce(np.maximum, w), 0.0)
    mn = np.minimum(grid.reduce(np.minimum, w), 0.0)
    hi, lo, scale, zero, deg = _params_from_extremes(mx, mn, gamma, beta, cfg.qmax)
    return QuantParams(scale, zero.astype(np.int64), lo, hi, deg)


def _check_params(p, grid):
    if np.shape(p.scale) != grid.dims:
        raise ShapeError(f"params grid {np.shape(p.scale)} does not match config grid {grid.dims}")


def quantize(w, p, cfg):
    """Integer codes ``clamp(round(w / scale) + zero, 0, 2^bits - 1)``."""
    w = as_matrix(w, "weight")
    grid = cfg.grid(w.shape)
    _check_params(p, grid)
    codes = _backend.kernels.quantize_codes(
        w, grid.expand(p.scale), grid.expand(p.zero).astype(np.float64), cfg.qmax
    )
    return IntCodes(codes, cfg.bits)


def dequantize(q, p, cfg):
    """``(code - zero) * scale``; degenerate groups decode to their clip_lo."""
    codes = np.asarray(q.codes)
    if codes.size and (codes.min() < 0 or codes.max() > cfg.qmax):
        raise InvalidInputError(f"codes outside [0, {cfg.qmax}]")
    grid = cfg.grid(codes.shape)
    _check_params(p, grid)
    deg = grid.expand(p.degenerate)
    out = (codes - grid.expand(p.zero)) * grid.expand(p.scale)
    return np.where(deg, grid.expand(p.clip_lo), out)


def fake_quant(w, cfg, clip=None):
    """Quantize-dequantize round trip plus the straight-through mask.

    The mask is True where ``clip_lo <= w <= clip_hi``; the gradient of the
    output w.r.t. ``w`` is 1 there and 0 elsewhere.
    """
    out, ctx = fake_quant_fwd(w, cfg, clip)
    return out, ctx.mask


@dataclass
class _Tape:
    grid: GroupGrid
    w: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    mx: np.ndarray
    mn: np.ndarray
    scale: np.ndarray
    deg: np.ndarray
    mask: np.ndarray
    above: np.ndarray
    below: np.ndarray
    rho: np.ndarray
    qmax: int


def fake_quant_fwd(w, cfg, clip=None, rho=None):
    """Forward pass that also records what the backward pass needs.

    With ``rho`` given, the rounding residual is taken from it instead of
    being recomputed, giving the smooth surrogate whose exact derivative is
    the straight-through gradient (used by finite-difference checks).
    """
    w = np.asarray(w, dtype=np.float64)
    grid = cfg.grid(w.shape)
    gamma, beta = _clip_grids(grid, clip)
    mx = np.maximum(grid.reduce(np.maximum, w), 0.0)
    mn = np.minimum(grid.reduce(np.minimum, w), 0.0)
    hi, lo, scale, zero, deg = _params_from_extremes(mx, mn, gamma, beta, cfg.qmax)
    hi_f, lo_f, scale_f = grid.expand(hi), grid.expand(lo), grid.expand(scale)
    deg_f = grid.expand(deg)
    above = w > hi_f
    below = w < lo_f
    clamped = np.minimum(np.maximum(w, lo_f), hi_f)
    if rho is None:
        codes = _backend.kernels.quantize_codes(w, scale_f, grid.expand(zero), cfg.qmax)
        dq = (codes - grid.expand(zero)) * scale_f
        out = np.where(deg_f, lo_f, dq)
        rho = np.where(deg_f, 0.0, (dq - clamped) / scale_f)
    else:
        out = np.where(deg_f, lo_f, clamped + scale_f * rho)
    mask = ~(above | below)
    tape = _Tape(grid, w, gamma, beta, mx, mn, scale, deg, mask, above, below, rho, cfg.qmax)
    return out, tape


def _first_index_per_group(grid, hit):
    gid = grid.group_ids().ravel()
    flat = np.flatnonzero(hit.ravel())
    groups, first = np.unique(gid[flat], return_index=True)
    return groups, flat[first]


def fake_quant_bwd(tape, g):
    """Vector-Jacobian product of :func:`fake_quant_fwd`.

    Returns ``(grad_w, grad_gamma, grad_beta)``; the clip gradients are
    shaped like the group grid.
    """
    grid = tape.grid
    g = np.asarray(g, dtype=np.float64)
    live = ~grid.expand(tape.deg)
    gl = np.where(live, g, 0.0)
    grad_w = np.where(tape.mask, gl, 0.0)

    rho_l = tape.rho / tape.qmax
    grad_hi = grid.reduce(np.add, gl * (tape.above + rho_l))
    grad_lo = grid.reduce(np.add, gl * (tape.below - rho_l))
    grad_hi = np.where(tape.deg, 0.0, grad_hi)
    grad_lo = np.where(tape.deg, 0.0, grad_lo)

    grad_gamma = grad_hi * tape.mx
    grad_beta = grad_lo * tape.mn

    # The group max/min themselves depend on one entry each.
    flat = grad_w.ravel()
    w = tape.w
    mx_f = grid.expand(tape.mx)
    groups, idx = _first_index_per_group(grid, (w == mx_f) & (mx_f > 0))
    flat[idx] += (grad_hi * tape.gamma).ravel()[groups]
    mn_f = grid.expand(tape.mn)
    groups, idx = _first_index_per_group(grid, (w == mn_f) & (mn_f < 0))
    flat[idx] += (grad_lo * tape.beta).ravel()[groups]
    return flat.reshape(w.shape), grad_gamma, grad_beta
