"""Block-wise gradient calibration.

Every linear layer in a block is reparameterized as

    W' = orient(u @ (diag_rect(s) + band(Z)) @ v)

with frozen SVD factors, then smoothed, fake-quantized and run through the
block. The mean squared difference to the full-precision block output is
minimized with AdamW over two parameter groups: the band values (``lr_desv``)
and the smoothing/clipping parameters (``lr_aux``). Gradients are analytic;
quantizers use the straight-through rule from :mod:`desvq.quantizer`.
"""

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import desv, quantizer
from .errors import CalibrationError, InvalidInputError, ShapeError
from .numerics import as_matrix, svd
from .quantizer import ClipParams, QuantConfig, sigmoid
from .transform import SmoothParams, apply_smooth, init_smooth, smooth_vjp

logger = logging.getLogger(__name__)

NONLINEARITIES = ("relu", "gelu", "none")
_GELU_C = np.sqrt(2.0 / np.pi)


# --------------------------------------------------------------------------
# model description
# --------------------------------------------------------------------------


@dataclass
class LinearLayer:
    name: str
    w: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.w = as_matrix(self.w, f"{self.name}.w")
        self.bias = np.asarray(self.bias, dtype=np.float64).ravel()
        if self.bias.shape != (self.w.shape[1],):
            raise ShapeError(
                f"{self.name}: bias {self.bias.shape} does not match out_dim {self.w.shape[1]}"
            )

    @property
    def in_dim(self):
        return self.w.shape[0]

    @property
    def out_dim(self):
        return self.w.shape[1]


@dataclass
class Block:
    layers: list
    act: str = "none"

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a block needs at least one layer")
        if self.act not in NONLINEARITIES:
            raise ShapeError(f"unknown nonlinearity {self.act!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(
                    f"{prev.name} -> {nxt.name}: {prev.out_dim} outputs feed {nxt.in_dim} inputs"
                )

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim


def nonlin(kind, h):
    if kind == "relu":
        return np.maximum(h, 0.0)
    if kind == "gelu":
        return 0.5 * h * (1.0 + np.tanh(_GELU_C * (h + 0.044715 * h**3)))
    return h


def nonlin_grad(kind, h, g):
    if kind == "relu":
        return g * (h > 0)
    if kind == "gelu":
        inner = _GELU_C * (h + 0.044715 * h**3)
        th = np.tanh(inner)
        d = 0.5 * (1.0 + th) + 0.5 * h * (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * h * h)
        return g * d
    return g


def _chain(x, layers, act, layer_fn):
    h = x
    for k, layer in enumerate(layers):
        if k:
            h = nonlin(act, h)
        h = layer_fn(k, layer, h)
    return h


def plain_forward(block, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != block.in_dim:
        raise ShapeError(f"input {x.shape} does not match block input dim {block.in_dim}")
    return _chain(x, block.layers, block.act, lambda k, l, h: h @ l.w + l.bias)


# --------------------------------------------------------------------------
# configuration and records
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr_desv: float = 1.5e-4
    lr_aux: float = 1e-3
    weight_decay: float = 0.0
    betas: tuple = (0.9, 0.999)
    epsilon: float = 1e-8
    steps: int = 200
    batch: int = 256
    seed: int = 0
    n_diag: int = 100
    bits_w: int = 4
    bits_a: int = 16
    granularity: str = "per-channel"
    group_size: int | None = None
    method: str = "desv"
    learn_smooth: bool = True
    learn_clip: bool = True
    clip_init: float = 4.0
    smooth_alpha: float = 0.5

    def __post_init__(self):
        if self.lr_desv <= 0 or self.lr_aux <= 0:
            raise InvalidInputError("learning rates must be positive")
        if self.weight_decay != 0:
            raise InvalidInputError("weight_decay is fixed at 0")
        if self.steps < 0 or self.batch < 1:
            raise InvalidInputError("steps must be >= 0 and batch >= 1")
        if self.method not in ("desv", "lsi"):
            raise InvalidInputError(f"unknown method {self.method!r}")
        if self.n_diag < 0:
            raise InvalidInputError("n_diag must be nonnegative")

    @property
    def weight_cfg(self):
        return QuantConfig(self.bits_w, self.granularity, "cols", self.group_size)

    @property
    def act_cfg(self):
        # 16-bit activations mean "left in floating point" (WxA16).
        if self.bits_a is None or self.bits_a >= 16:
            return None
        return QuantConfig(self.bits_a, "per-tensor")


@dataclass
class CalibRecord:
    name: str
    losses: list = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    steps: int = 0
    wall_time: float = 0.0
    block_input: np.ndarray | None = None


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, p):
        return cls(np.zeros_like(p), np.zeros_like(p), 0)


def adamw_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """One bias-corrected AdamW update; returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeError(f"params {params.shape} and grads {grads.shape} differ")
    if not np.all(np.isfinite(grads)):
        bad = int(np.sum(~np.isfinite(grads)))
        raise CalibrationError(f"non-finite gradient in {bad} of {grads.size} entries; step aborted")
    b1, b2 = betas
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new = params - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * params)
    return new, AdamState(m, v, t)


# --------------------------------------------------------------------------
# quantized layers
# --------------------------------------------------------------------------


def _act_fwd(cfg, x, rho=None):
    if cfg is None:
        return x, None
    return quantizer.fake_quant_fwd(x, cfg, None, rho=rho)


def _act_bwd(tape, g):
    if tape is None:
        return g
    return quantizer.fake_quant_bwd(tape, g)[0]


@dataclass
class QuantizedLayer:
    """Deployable layer: integer codes in the smoothed weight space.

    ``forward(x) = actq((x - shift) / scale) @ dequant(codes) + bias_t``
    """

    name: str
    codes: quantizer.IntCodes
    qparams: quantizer.QuantParams
    wcfg: QuantConfig
    acfg: QuantConfig | None
    smooth: SmoothParams
    bias_t: np.ndarray
    clip: ClipParams | None = None
    band: desv.BandIncrement | None = None
    factors: object = None
    transposed: bool = False

    @property
    def in_dim(self):
        return self.codes.shape[0]

    @property
    def out_dim(self):
        return self.codes.shape[1]

    def dequantized_weight(self):
        return quantizer.dequantize(self.codes, self.qparams, self.wcfg)

    def effective_weight(self):
        """Dequantized weight mapped back to the original (unsmoothed) space."""
        return self.dequantized_weight() / self.smooth.scale[:, None]

    def forward(self, x):
        x_t = (np.asarray(x, dtype=np.float64) - self.smooth.shift) / self.smooth.scale
        x_q, _ = _act_fwd(self.acfg, x_t)
        return x_q @ self.dequantized_weight() + self.bias_t


@dataclass
class QuantizedBlock:
    layers: list
    act: str = "none"

    def forward(self, x):
        return _chain(np.asarray(x, dtype=np.float64), self.layers, self.act,
                      lambda k, l, h: l.forward(h))


class LayerState:
    """Trainable reparameterization of one linear layer."""

    def __init__(self, layer, cfg, x_in):
        self.layer = layer
        self.cfg = cfg
        self.wcfg = cfg.weight_cfg
        self.acfg = cfg.act_cfg
        w = layer.w
        self.transposed = w.shape[0] < w.shape[1]
        m = w.T if self.transposed else w
        self.factors = svd(m)
        self.a, self.b = m.shape
        self.n_diag = desv.clamp_diagonals(cfg.n_diag, self.a, self.b)
        self.diag_s = desv.diag_rect(self.factors.s, self.a, self.b)

        self.params = {}
        if cfg.method == "lsi":
            self.params["lsi"] = np.zeros(self.b)
        else:
            self.params["band"] = np.zeros((2 * self.n_diag + 1, self.b))
        if cfg.learn_smooth:
            sp = init_smooth(x_in, w, cfg.smooth_alpha)
            self.params["log_scale"] = np.log(sp.scale)
            self.params["shift"] = sp.shift.copy()
        grid = self.wcfg.grid(w.shape)
        if cfg.learn_clip:
            self.params["gamma_logit"] = np.full(grid.dims, float(cfg.clip_init))
            self.params["beta_logit"] = np.full(grid.dims, float(cfg.clip_init))

    # parameter views -------------------------------------------------------

    def smooth_params(self):
        if "log_scale" in self.params:
            return SmoothParams.from_log(self.params["log_scale"], self.params["shift"])
        return SmoothParams.identity(self.layer.in_dim)

    def clip_params(self):
        if "gamma_logit" in self.params:
            return ClipParams.from_logits(self.params["gamma_logit"], self.params["beta_logit"])
        return None

    def band_increment(self):
        if "lsi" in self.params:
            return desv.BandIncrement(0, self.b, self.params["lsi"][None, :])
        return desv.BandIncrement(self.n_diag, self.b, self.params["band"])

    def weight(self):
        f = self.factors
        if "lsi" in self.params:
            m = desv.lsi_reconstruct(f.u, f.s, self.params["lsi"], f.v)
        else:
            d = self.diag_s + desv.map_band(self.band_increment(), self.a, self.b)
            m = desv.reconstruct_weight(f.u, d, f.v)
        return m.T if self.transposed else m

    # forward / backward ----------------------------------------------------

    def forward(self, x, frozen=None):
        w = self.weight()
        sp = self.smooth_params()
        x_t, w_t, b_t = apply_smooth(x, w, self.layer.bias, sp)
        frozen = frozen or {}
        x_q, a_tape = _act_fwd(self.acfg, x_t, frozen.get("rho_a"))
        w_q, w_tape = quantizer.fake_quant_fwd(w_t, self.wcfg, self.clip_params(),
                                               rho=frozen.get("rho_w"))
        y = x_q @ w_q + b_t
        tape = dict(x=x, w=w, sp=sp, x_q=x_q, w_q=w_q, a_tape=a_tape, w_tape=w_tape)
        return y, tape

    def residuals(self, tape):
        out = {"rho_w": tape["w_tape"].rho}
        if tape["a_tape"] is not None:
            out["rho_a"] = tape["a_tape"].rho
        return out

    def backward(self, tape, g_y):
        g_xq = g_y @ tape["w_q"].T
        g_wq = tape["x_q"].T @ g_y
        g_bt = g_y.sum(axis=0)
        g_wt, g_gamma, g_beta = quantizer.fake_quant_bwd(tape["w_tape"], g_wq)
        g_xt = _act_bwd(tape["a_tape"], g_xq)
        sp = tape["sp"]
        g_x, g_w, g_s, g_d = smooth_vjp(tape["x"], tape["w"], sp, g_xt, g_wt, g_bt)

        grads = {}
        g_m = g_w.T if self.transposed else g_w
        f = self.factors
        if "lsi" in self.params:
            grads["lsi"] = desv.grad_band(g_m, f.u, f.v, 0)[0]
        else:
            grads["band"] = desv.grad_band(g_m, f.u, f.v, self.n_diag)
        if "log_scale" in self.params:
            grads["log_scale"] = g_s * sp.scale
            grads["shift"] = g_d
        if "gamma_logit" in self.params:
            gam = sigmoid(self.params["gamma_logit"])
            bet = sigmoid(self.params["beta_logit"])
            grads["gamma_logit"] = g_gamma * gam * (1.0 - gam)
            grads["beta_logit"] = g_beta * bet * (1.0 - bet)
        return g_x, grads

    def freeze(self, keep_factors=False):
        w = self.weight()
        sp = self.smooth_params()
        _, w_t, b_t = apply_smooth(np.zeros((1, w.shape[0])), w, self.layer.bias, sp)
        clip = self.clip_params()
        qp = quantizer.compute_params(w_t, self.wcfg, clip)
        codes = quantizer.quantize(w_t, qp, self.wcfg)
        return QuantizedLayer(
            self.layer.name, codes, qp, self.wcfg, self.acfg, sp, b_t, clip,
            self.band_increment(), self.factors if keep_factors else None, self.transposed,
        )


def block_states_forward(states, act, x, frozen=None):
    tapes, pre = [], []
    h = x
    for k, st in enumerate(states):
        if k:
            pre.append(h)
            h = nonlin(act, h)
        h, tape = st.forward(h, frozen[k] if frozen else None)
        tapes.append(tape)
    return h, tapes, pre


def block_states_backward(states, act, tapes, pre, g):
    grads = [None] * len(states)
    for k in range(len(states) - 1, -1, -1):
        g, grads[k] = states[k].backward(tapes[k], g)
        if k:
            g = nonlin_grad(act, pre[k - 1], g)
    return grads


def mse(a, b):
    d = np.asarray(a) - np.asarray(b)
    return float(np.mean(d * d))


def block_forward(block, x, quant=None):
    """Plain forward, or the quantized path when ``quant`` is given.

    ``quant`` may be a :class:`QuantizedBlock` or a list of :class:`LayerState`.
    """
    if quant is None:
        return plain_forward(block, x)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != block.in_dim:
        raise ShapeError(f"input {x.shape} does not match block input dim {block.in_dim}")
    if isinstance(quant, QuantizedBlock):
        return quant.forward(x)
    return block_states_forward(quant, block.act, x)[0]


def block_loss(block, quant, x, target=None):
    """Mean squared difference between the full-precision and quantized outputs."""
    if target is None:
        target = plain_forward(block, x)
    return mse(target, block_forward(block, x, quant))


# --------------------------------------------------------------------------
# drivers
# --------------------------------------------------------------------------


def _loss_and_grads(states, act, x, target):
    y, tapes, pre = block_states_forward(states, act, x)
    diff = y - target
    loss = float(np.mean(diff * diff))
    g = 2.0 * diff / diff.size
    return loss, block_states_backward(states, act, tapes, pre, g)


def calibrate_block(block, x, cfg, target=None, name="block", keep_factors=False):
    """Calibrate every layer of ``block`` jointly on inputs ``x``.

    ``target`` defaults to the full-precision block applied to ``x``.
    Returns ``(QuantizedBlock, CalibRecord)``.
    """
    x = as_matrix(x, "calibration input")
    if x.shape[1] != block.in_dim:
        raise ShapeError(f"calibration input {x.shape} does not match block input dim {block.in_dim}")
    if target is None:
        target = plain_forward(block, x)
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)

    # Layer inputs for the smoothing init come from the full-precision path.
    states, h = [], x
    for k, layer in enumerate(block.layers):
        if k:
            h = nonlin(block.act, h)
        states.append(LayerState(layer, cfg, h))
        h = h @ layer.w + layer.bias

    lr = {"band": cfg.lr_desv, "lsi": cfg.lr_desv}
    opt = [{k: AdamState.zeros_like(p) for k, p in st.params.items()} for st in states]
    record = CalibRecord(name)
    record.initial_loss = mse(target, block_states_forward(states, block.act, x)[0])
    best_loss = record.initial_loss
    best = [{k: p.copy() for k, p in st.params.items()} for st in states]
    n = x.shape[0]
    full = cfg.batch >= n
    over = 0
    for step in range(cfg.steps + 1):
        if full:
            xb, tb = x, target
        else:
            idx = np.sort(rng.choice(n, size=cfg.batch, replace=False))
            xb, tb = x[idx], target[idx]
        loss, grads = _loss_and_grads(states, block.act, xb, tb)
        full_loss = loss if full else mse(target, block_states_forward(states, block.act, x)[0])
        if full_loss < best_loss:
            best_loss = full_loss
            best = [{k: p.copy() for k, p in st.params.items()} for st in states]
        if step == cfg.steps:
            break
        record.losses.append(loss)
        for st, g, o in zip(states, grads, opt):
            for key, grad in g.items():
                try:
                    st.params[key], o[key] = adamw_step(
                        st.params[key], grad, o[key], lr.get(key, cfg.lr_aux),
                        cfg.betas, cfg.epsilon, cfg.weight_decay,
                    )
                except CalibrationError as exc:
                    record.steps = step + 1
                    record.wall_time = time.perf_counter() - t0
                    raise CalibrationError(f"{name}: {st.layer.name}.{key} at step {step + 1}: "
                                           f"{exc}", record) from exc
        if record.initial_loss > 0 and loss > 10.0 * record.initial_loss:
            over += 1
            if over >= 20:
                record.steps = step + 1
                record.wall_time = time.perf_counter() - t0
                raise CalibrationError(
                    f"{name}: loss above 10x initial for 20 consecutive steps (step {step + 1})",
                    record,
                )
        else:
            over = 0

    # The best iterate seen (initial parameters included) is the one emitted.
    for st, params in zip(states, best):
        st.params = params
    qblock = QuantizedBlock([st.freeze(keep_factors) for st in states], block.act)
    record.final_loss = mse(target, qblock.forward(x))
    record.steps = cfg.steps
    record.wall_time = time.perf_counter() - t0
    logger.info("%s: loss %.6g -> %.6g in %d steps (%.2fs)", name, record.initial_loss,
                record.final_loss, cfg.steps, record.wall_time)
    return qblock, record


def calibrate_layer(layer, x, cfg, keep_factors=False):
    """Single-layer convenience wrapper; returns ``(QuantizedLayer, CalibRecord)``."""
    qblock, record = calibrate_block(Block([layer]), x, cfg, name=layer.name,
                                     keep_factors=keep_factors)
    return qblock.layers[0], record


def calibrate_model(model, calib, cfg, keep_inputs=False, keep_factors=False):
    """Calibrate blocks in order, feeding each the quantized output of the previous one.

    Targets for block k are the full-precision block k applied to the
    propagated (quantized-path) input.
    """
    batches = [as_matrix(b, "calibration batch") for b in calib]
    if not batches:
        raise InvalidInputError("no calibration batches given")
    if not model:
        raise InvalidInputError("empty model")
    x = np.vstack(batches)
    qblocks, records = [], []
    for k, block in enumerate(model):
        try:
            qb, rec = calibrate_block(block, x, replace(cfg, seed=cfg.seed + k),
                                      name=f"block{k}", keep_factors=keep_factors)
        except CalibrationError as exc:
            raise CalibrationError(f"block {k}: {exc}", exc.record) from exc
        except ShapeError as exc:
            raise ShapeError(f"block {k}: {exc}") from exc
        if keep_inputs:
            rec.block_input = x.copy()
        qblocks.append(qb)
        records.append(rec)
        x = qb.forward(x)
    return qblocks, records


def rtn_block(block, cfg):
    """Round-to-nearest baseline: identity smoothing, no clipping, no increments."""
    layers = []
    for layer in block.layers:
        wcfg = cfg.weight_cfg
        qp = quantizer.compute_params(layer.w, wcfg)
        codes = quantizer.quantize(layer.w, qp, wcfg)
        layers.append(QuantizedLayer(layer.name, codes, qp, wcfg, cfg.act_cfg,
                                     SmoothParams.identity(layer.in_dim), layer.bias.copy()))
    return QuantizedBlock(layers, block.act)


def model_forward(model, x):
    """Forward through a list of :class:`Block` or :class:`QuantizedBlock`."""
    h = np.asarray(x, dtype=np.float64)
    for blk in model:
        h = blk.forward(h) if isinstance(blk, QuantizedBlock) else plain_forward(blk, h)
    return h
