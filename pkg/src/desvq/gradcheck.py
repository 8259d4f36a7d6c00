"""Finite-difference checks of the analytic gradients.

Quantizers are checked through their straight-through surrogate: the rounding
residuals recorded at the base point are held fixed, which leaves a function
that is smooth away from clamp edges and max/min switches and whose exact
derivative is the straight-through gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from . import desv
from .calibrate import Block, LayerState, LinearLayer, TrainConfig, block_states_backward, \
    block_states_forward, nonlin
from .numerics import svd
from .quantizer import ClipParams, QuantConfig, fake_quant_bwd, fake_quant_fwd
from .transform import SmoothParams, apply_smooth, smooth_vjp

STEP = 1e-5
TOL = 1e-3


@dataclass
class Entry:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradReport:
    label: str
    entries: list = field(default_factory=list)
    tol: float = TOL

    @property
    def max_rel_err(self):
        return max((e.rel_err for e in self.entries), default=0.0)

    @property
    def ok(self):
        return self.max_rel_err <= self.tol

    def summary(self):
        status = "ok" if self.ok else "FAIL"
        return f"{self.label}: {len(self.entries)} coords, max rel err {self.max_rel_err:.2e} [{status}]"


def central_difference(f, x, index, h=STEP):
    """Central difference of scalar ``f`` w.r.t. ``x[index]``; ``x`` restored after."""
    orig = x[index]
    x[index] = orig + h
    fp = f()
    x[index] = orig - h
    fm = f()
    x[index] = orig
    return (fp - fm) / (2.0 * h)


def _rel(a, n, floor):
    return abs(a - n) / max(abs(a), abs(n), floor)


def _report(label, items, floor_frac=1e-6):
    # items: (name, index, analytic, numeric)
    scale = max((abs(a) for _, _, a, _ in items), default=0.0)
    floor = max(scale * floor_frac, 1e-12)
    return GradReport(label, [Entry(n, i, a, v, _rel(a, v, floor)) for n, i, a, v in items])


def check_band(seed=0, a=8, b=4, n_diag=2):
    """grad_band against finite differences of a random quadratic-plus-linear loss."""
    rng = np.random.default_rng(seed)
    f = svd(rng.standard_normal((a, b)))
    target = rng.standard_normal((a, b))
    vals = rng.standard_normal((2 * n_diag + 1, b)) * 0.1

    def loss():
        d = desv.build_d(f.s, desv.BandIncrement(n_diag, b, vals), a, b)
        m = desv.reconstruct_weight(f.u, d, f.v)
        return float(np.sum((m - target) ** 2) + np.sum(np.sin(m)))

    d = desv.build_d(f.s, desv.BandIncrement(n_diag, b, vals), a, b)
    m = desv.reconstruct_weight(f.u, d, f.v)
    g = desv.grad_band(2 * (m - target) + np.cos(m), f.u, f.v, n_diag)
    support = desv.band_support(a, b, n_diag)
    items = []
    for r in range(2 * n_diag + 1):
        for j in range(b):
            row = j + r - n_diag
            if 0 <= row < a and support[row, j]:
                items.append(("band", (r, j), g[r, j], central_difference(loss, vals, (r, j))))
    return _report("band", items)


def check_smooth(seed=0, n=5, d_in=4, d_out=3):
    """smooth_vjp against finite differences w.r.t. scale and shift."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d_in))
    w = rng.standard_normal((d_in, d_out))
    b = rng.standard_normal(d_out)
    scale = np.exp(rng.normal(0, 0.5, d_in))
    shift = rng.normal(0, 0.5, d_in)
    gx, gw, gb = rng.standard_normal((n, d_in)), rng.standard_normal((d_in, d_out)), \
        rng.standard_normal(d_out)

    def loss():
        xt, wt, bt = apply_smooth(x, w, b, SmoothParams(scale, shift))
        return float(np.sum(gx * xt) + np.sum(gw * wt) + np.sum(gb * bt))

    _, _, g_s, g_d = smooth_vjp(x, w, SmoothParams(scale, shift), gx, gw, gb)
    items = [("scale", (i,), g_s[i], central_difference(loss, scale, i)) for i in range(d_in)]
    items += [("shift", (i,), g_d[i], central_difference(loss, shift, i)) for i in range(d_in)]
    return _report("smooth", items)


def check_quantizer(seed=0, shape=(7, 5), bits=3):
    """fake_quant_bwd against finite differences of the frozen-residual surrogate."""
    rng = np.random.default_rng(seed)
    cfg = QuantConfig(bits, "group", group_size=3)
    w = rng.standard_normal(shape)
    ng = cfg.grid(shape).n_groups
    gl, bl = rng.normal(2.0, 1.0, ng), rng.normal(2.0, 1.0, ng)
    g = rng.standard_normal(shape)
    _, tape = fake_quant_fwd(w, cfg, ClipParams.from_logits(gl, bl))
    gw, gg, gb = fake_quant_bwd(tape, g)

    def loss():
        out, _ = fake_quant_fwd(w, cfg, ClipParams.from_logits(gl, bl), rho=tape.rho)
        return float(np.sum(g * out))

    gam, bet = 1 / (1 + np.exp(-gl)), 1 / (1 + np.exp(-bl))
    items = [("w", i, gw[i], central_difference(loss, w, i)) for i in np.ndindex(shape)]
    gg, gb = gg.ravel() * gam * (1 - gam), gb.ravel() * bet * (1 - bet)
    items += [("gamma_logit", (k,), gg[k], central_difference(loss, gl, k)) for k in range(ng)]
    items += [("beta_logit", (k,), gb[k], central_difference(loss, bl, k)) for k in range(ng)]
    return _report("quantizer", items)


def _kink_margin(tapes, pre, relu):
    """Smallest distance (in units of the quantizer scale) to a non-smooth point."""
    margin = np.inf
    for tape in tapes:
        for t in (tape["w_tape"], tape["a_tape"]):
            if t is None:
                continue
            sc = t.grid.expand(t.scale)
            hi = t.grid.expand(t.gamma * t.mx)
            lo = t.grid.expand(t.beta * t.mn)
            # clamp edges, ignoring the extremes themselves when unclipped
            edge = np.minimum(np.abs(t.w - hi), np.abs(t.w - lo)) / sc
            edge = edge[(t.w != t.grid.expand(t.mx)) & (t.w != t.grid.expand(t.mn))]
            if edge.size:
                margin = min(margin, float(edge.min()))
            # near-ties for the group max / min
            gid = t.grid.group_ids().ravel()
            order = np.lexsort((t.w.ravel(), gid))
            vals, ids = t.w.ravel()[order], gid[order]
            same = ids[1:] == ids[:-1]
            gaps = np.diff(vals)[same] / t.scale.ravel()[ids[1:][same]]
            if gaps.size:
                margin = min(margin, float(gaps.min()))
    for h in pre if relu else ():
        margin = min(margin, float(np.min(np.abs(h))))
    return margin


def check_block(seed=0, n_coords=32, act="relu", nudge=1e-4, attempts=8):
    """End-to-end block gradient against finite differences of the surrogate loss.

    A two-layer block with weight and activation quantization, active
    clipping, learned smoothing and a nonzero band. Inputs whose forward pass
    sits within ``nudge`` of a clamp edge, a max/min switch or a ReLU kink are
    perturbed and the check is retried.
    """
    rng = np.random.default_rng(seed)
    d0, d1, d2, n = 6, 9, 5, 12
    block = Block([
        LinearLayer("l0", rng.standard_normal((d0, d1)), rng.standard_normal(d1)),
        LinearLayer("l1", rng.standard_normal((d1, d2)), rng.standard_normal(d2)),
    ], act)
    cfg = TrainConfig(bits_w=3, bits_a=8, granularity="group", group_size=4, n_diag=2, seed=seed)
    x = rng.standard_normal((n, d0)) * np.exp(rng.normal(0, 0.5, d0))
    target = rng.standard_normal((n, d2))

    for _ in range(attempts):
        states, h = [], x
        for k, layer in enumerate(block.layers):
            if k:
                h = nonlin(act, h)
            states.append(LayerState(layer, cfg, h))
            h = h @ layer.w + layer.bias
        for st in states:
            p = st.params
            p["band"] = rng.normal(0, 0.05, p["band"].shape)
            p["log_scale"] = p["log_scale"] + rng.normal(0, 0.1, p["log_scale"].shape)
            p["shift"] = p["shift"] + rng.normal(0, 0.1, p["shift"].shape)
            p["gamma_logit"] = rng.normal(2.0, 0.5, p["gamma_logit"].shape)
            p["beta_logit"] = rng.normal(2.0, 0.5, p["beta_logit"].shape)
        y, tapes, pre = block_states_forward(states, act, x)
        if _kink_margin(tapes, pre, act == "relu") > nudge:
            break
        x = x + nudge * rng.standard_normal(x.shape)
    else:
        y, tapes, pre = block_states_forward(states, act, x)
    frozen = [st.residuals(t) for st, t in zip(states, tapes)]

    diff = y - target
    grads = block_states_backward(states, act, tapes, pre, 2.0 * diff / diff.size)

    def loss():
        out = block_states_forward(states, act, x, frozen)[0]
        return float(np.mean((out - target) ** 2))

    coords = [(k, name, idx) for k, st in enumerate(states)
              for name, arr in st.params.items() for idx in np.ndindex(arr.shape)]
    names = sorted({c[1] for c in coords})
    # one coordinate of every parameter kind first, the rest at random
    picks = [next(c for c in coords if c[1] == nm) for nm in names]
    rest = [c for c in coords if c not in picks]
    order = rng.permutation(len(rest))[: max(0, n_coords - len(picks))]
    picks += [rest[i] for i in order]

    items = []
    for k, name, idx in picks:
        num = central_difference(loss, states[k].params[name], idx)
        items.append((f"{block.layers[k].name}.{name}", idx, grads[k][name][idx], num))
    return _report(f"block[{act}]", items)


def run_suite(seed=0):
    return [
        check_band(seed),
        check_smooth(seed),
        check_quantizer(seed),
        check_block(seed, act="relu"),
        check_block(seed + 1, act="gelu"),
    ]
