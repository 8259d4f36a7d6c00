"""Weight-disturbance and singular-value expressiveness diagnostics."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShapeError
from .numerics import as_matrix, svd


@dataclass(frozen=True)
class ExpressivenessCurve:
    """Cumulative normalized singular-value mass, one point per singular value."""

    points: np.ndarray

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class CurveComparison:
    deviation: float
    padded: bool


def disturbance_magnitude(w_orig, w_quant):
    """Mean absolute entrywise difference between two weight matrices."""
    a = np.asarray(w_orig, dtype=np.float64)
    b = np.asarray(w_quant, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(b - a)))


def curve_from_singular_values(s):
    s = np.asarray(s, dtype=np.float64)
    total = s.sum()
    if not total > 0:
        raise InvalidInputError("expressiveness curve undefined for an all-zero matrix")
    pts = np.cumsum(s) / total
    pts = np.clip(pts, 0.0, 1.0)
    pts[-1] = 1.0
    return ExpressivenessCurve(pts)


def expressiveness_curve(h):
    h = as_matrix(h, "hidden states")
    if not np.any(h):
        raise InvalidInputError("expressiveness curve undefined for an all-zero matrix")
    return curve_from_singular_values(svd(h).s)


def compare_curves(a, b):
    """Max absolute deviation; the shorter curve is padded with 1.0."""
    pa = np.asarray(getattr(a, "points", a), dtype=np.float64)
    pb = np.asarray(getattr(b, "points", b), dtype=np.float64)
    n = max(len(pa), len(pb))
    padded = len(pa) != len(pb)
    pa = np.concatenate([pa, np.ones(n - len(pa))])
    pb = np.concatenate([pb, np.ones(n - len(pb))])
    dev = float(np.max(np.abs(pa - pb))) if n else 0.0
    return CurveComparison(dev, padded)


def curves_csv(curves):
    """CSV text with an ``index`` column and one column per named curve.

    ``curves`` maps column name to curve; shorter curves are padded with 1.0.
    """
    names = list(curves)
    cols = [np.asarray(getattr(c, "points", c), dtype=np.float64) for c in curves.values()]
    n = max((len(c) for c in cols), default=0)
    lines = [",".join(["index", *names])]
    for i in range(n):
        vals = [repr(float(c[i])) if i < len(c) else "1.0" for c in cols]
        lines.append(",".join([str(i), *vals]))
    return "\n".join(lines) + "\n"
