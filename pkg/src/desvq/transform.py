"""Per-channel smoothing / shifting equivalent transform.

For a linear layer ``y = x @ w + b`` with ``w`` shaped ``(in_dim, out_dim)``::

    x_t = (x - shift) / scale      (column-wise)
    w_t = scale[:, None] * w       (row-wise)
    b_t = b + shift @ w

and ``x_t @ w_t + b_t == x @ w + b`` exactly in real arithmetic.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParamError, ShapeError

SCALE_MIN, SCALE_MAX = 1e-3, 1e3


@dataclass(frozen=True)
class SmoothParams:
    scale: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        scale = np.asarray(self.scale, dtype=np.float64).ravel()
        shift = np.asarray(self.shift, dtype=np.float64).ravel()
        if scale.shape != shift.shape:
            raise ShapeError(f"scale {scale.shape} and shift {shift.shape} differ in length")
        if np.any(~(scale > 0)):
            raise InvalidParamError("smooth scale must be strictly positive")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "shift", shift)

    @classmethod
    def identity(cls, dim):
        return cls(np.ones(dim), np.zeros(dim))

    @classmethod
    def from_log(cls, log_scale, shift):
        return cls(np.exp(log_scale), shift)

    def __len__(self):
        return self.scale.shape[0]


def init_smooth(x, w, alpha=0.5):
    """Migration-strength-0.5 scale and mean shift from calibration data.

    ``scale_i = max|x[:, i]|**alpha / max|w[i, :]|**(1 - alpha)``, clamped to
    ``[1e-3, 1e3]``; ``shift_i`` is the column mean of ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    act = np.abs(x).max(axis=0) ** alpha
    wt = np.abs(w).max(axis=1) ** (1.0 - alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(wt > 0, act / np.where(wt > 0, wt, 1.0), SCALE_MAX)
    scale = np.clip(np.nan_to_num(scale, nan=1.0), SCALE_MIN, SCALE_MAX)
    return SmoothParams(scale, x.mean(axis=0))


def _check(x, w, b, p):
    if x is not None and x.shape[1] != w.shape[0]:
        raise ShapeError(f"activation {x.shape} does not chain into weight {w.shape}")
    if w.shape[0] != len(p):
        raise ShapeError(f"weight has {w.shape[0]} input channels, params have {len(p)}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias {b.shape} does not match weight output dim {w.shape[1]}")


def apply_smooth(x, w, b, p):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    _check(x, w, b, p)
    x_t = (x - p.shift) / p.scale
    w_t = p.scale[:, None] * w
    b_t = b + p.shift @ w
    return x_t, w_t, b_t


def invert_smooth(w_t, b_t, p):
    w_t = np.asarray(w_t, dtype=np.float64)
    b_t = np.asarray(b_t, dtype=np.float64).ravel()
    _check(None, w_t, b_t, p)
    w = w_t / p.scale[:, None]
    return w, b_t - p.shift @ w


def smooth_vjp(x, w, p, g_xt=None, g_wt=None, g_bt=None):
    """Pull gradients on ``(x_t, w_t, b_t)`` back to ``(x, w, scale, shift)``.

    Any of the upstream gradients may be None (treated as zero).
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    s, d = p.scale, p.shift
    g_x = np.zeros_like(x)
    g_w = np.zeros_like(w)
    g_s = np.zeros_like(s)
    g_d = np.zeros_like(d)
    if g_xt is not None:
        g_x = g_xt / s
        g_d -= g_x.sum(axis=0)
        g_s -= np.sum(g_xt * (x - d), axis=0) / (s * s)
    if g_wt is not None:
        g_w += s[:, None] * g_wt
        g_s += np.sum(g_wt * w, axis=1)
    if g_bt is not None:
        g_bt = np.asarray(g_bt, dtype=np.float64).ravel()
        g_d += w @ g_bt
        g_w += np.outer(d, g_bt)
    return g_x, g_w, g_s, g_d
