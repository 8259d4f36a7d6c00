"""Command-line entry point: ``desvq <command> [options]``."""

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import analyze, calibrate, gradcheck, modelio
from .calibrate import Block, LinearLayer, QuantizedBlock, TrainConfig
from .container import read_container, write_container
from .errors import DesvqError

logger = logging.getLogger("desvq")

VOCAB = 32
HEAD_SEED = 1234


def _ints(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _batches(path):
    tensors = read_container(path)
    if not tensors:
        raise DesvqError(f"{path}: container holds no batches")
    return [np.asarray(t, dtype=np.float64) for t in tensors.values()]


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_gen_model(args):
    dims = args.dims
    if len(dims) < 2:
        raise DesvqError("--dims needs at least two sizes")
    if dims[0] != dims[-1] and args.blocks > 1:
        raise DesvqError("stacking blocks needs the first and last dims to match")
    rng = np.random.default_rng(args.seed)
    model = []
    for k in range(args.blocks):
        layers = []
        for j, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            w = rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)
            b = 0.1 * rng.standard_normal(d_out)
            layers.append(LinearLayer(f"b{k}.l{j}", w, b))
        model.append(Block(layers, args.act))
    modelio.save_model(args.out, model)
    return 0


def cmd_gen_calib(args):
    rng = np.random.default_rng(args.seed)
    spread = np.exp(rng.normal(0.0, args.channel_spread, args.dim))
    batches = {f"batch{i}": rng.standard_normal((args.rows, args.dim)) * spread
               for i in range(args.batches)}
    write_container(args.out, {k: v.astype(np.float32) for k, v in batches.items()})
    return 0


def _train_config(args):
    method = args.method or ("lsi" if args.diagonals == 0 else "desv")
    granularity = args.granularity or ("group" if args.group_size else "per-channel")
    return TrainConfig(
        lr_desv=args.lr, lr_aux=args.lr_aux, steps=args.steps, batch=args.batch, seed=args.seed,
        n_diag=args.diagonals, bits_w=args.bits_w, bits_a=args.bits_a,
        granularity=granularity, group_size=args.group_size, method=method,
        learn_smooth=not args.no_smooth, learn_clip=not args.no_clip,
    )


def cmd_quantize(args):
    model = modelio.load_model(args.model)
    calib = _batches(args.calib)
    cfg = _train_config(args)
    t0 = time.perf_counter()
    qblocks, records = calibrate.calibrate_model(model, calib, cfg, keep_factors=args.store_svd)
    modelio.save_quantized(args.out, qblocks, cfg, records)
    for rec in records:
        print(f"{rec.name}: initial {rec.initial_loss:.6g} final {rec.final_loss:.6g}")
    logger.info("quantize finished in %.2fs", time.perf_counter() - t0)
    return 0


def toy_head(dim, vocab=VOCAB, seed=HEAD_SEED):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((dim, vocab)) / np.sqrt(dim)


def toy_perplexity(h, head, targets):
    """exp of the mean cross-entropy of ``h @ head`` against ``targets``."""
    logits = h @ head
    logits = logits - logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return float(np.exp(-np.mean(logp[np.arange(len(targets)), targets])))


def cmd_eval(args):
    model = modelio.load_model(args.model)
    other = modelio.load_any(args.quantized)
    x = np.vstack(_batches(args.data))
    y_ref = calibrate.model_forward(model, x)
    y = calibrate.model_forward(other, x)
    if y.shape != y_ref.shape:
        raise DesvqError(f"output shapes differ: {y_ref.shape} vs {y.shape}")
    head = toy_head(y_ref.shape[1])
    # next-token targets are the full-precision model's own predictions
    targets = np.argmax(y_ref @ head, axis=1)
    print(f"mse {calibrate.mse(y_ref, y)!r}")
    print(f"ppl_plain {toy_perplexity(y_ref, head, targets)!r}")
    print(f"ppl_quant {toy_perplexity(y, head, targets)!r}")
    return 0


def _layer_weights(model):
    out = {}
    for blk in model:
        for layer in blk.layers:
            out[layer.name] = layer.effective_weight() if isinstance(blk, QuantizedBlock) \
                else layer.w
    return out


def _hidden(model, x):
    """Block outputs, one matrix per block."""
    hs, h = [], x
    for blk in model:
        h = calibrate.model_forward([blk], h)
        hs.append(h)
    return hs


def cmd_analyze(args):
    model = modelio.load_model(args.orig)
    quant = modelio.load_any(args.quantized)
    w_ref, w_q = _layer_weights(model), _layer_weights(quant)
    if set(w_ref) != set(w_q):
        raise DesvqError("models do not have the same layers")
    os.makedirs(args.out, exist_ok=True)
    lines = ["layer,disturbance"]
    lines += [f"{n},{analyze.disturbance_magnitude(w_ref[n], w_q[n])!r}" for n in w_ref]
    with open(os.path.join(args.out, "disturbance.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")

    if args.hidden:
        x = np.vstack(_batches(args.hidden))
        curves = {}
        for k, (h0, h1) in enumerate(zip(_hidden(model, x), _hidden(quant, x))):
            curves[f"block{k}_orig"] = analyze.expressiveness_curve(h0)
            curves[f"block{k}_quant"] = analyze.expressiveness_curve(h1)
    else:
        curves = {}
        for n in w_ref:
            curves[f"{n}_orig"] = analyze.expressiveness_curve(w_ref[n])
            curves[f"{n}_quant"] = analyze.expressiveness_curve(w_q[n])
    with open(os.path.join(args.out, "expressiveness.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(analyze.curves_csv(curves))
    return 0


def cmd_gradcheck(args):
    reports = gradcheck.run_suite(args.seed)
    for r in reports:
        print(r.summary())
    return 0 if all(r.ok for r in reports) else 1


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="desvq", description="Low-bit quantization with learned "
                                "singular-value band increments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-model", help="write a seeded random MLP model")
    s.add_argument("--dims", type=_ints, default=[64, 128, 64])
    s.add_argument("--blocks", type=int, default=2)
    s.add_argument("--act", choices=["relu", "gelu", "none"], default="gelu")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_model)

    s = sub.add_parser("gen-calib", help="write seeded Gaussian calibration batches")
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--batches", type=int, default=4)
    s.add_argument("--rows", type=int, default=64)
    s.add_argument("--channel-spread", type=float, default=1.0,
                   help="std of the log per-channel scale")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_calib)

    s = sub.add_parser("quantize", help="calibrate and quantize a model")
    s.add_argument("--model", required=True)
    s.add_argument("--calib", required=True)
    s.add_argument("--bits-w", type=int, required=True)
    s.add_argument("--bits-a", type=int, required=True)
    s.add_argument("--group-size", type=int)
    s.add_argument("--granularity", choices=["per-tensor", "per-channel", "group"])
    s.add_argument("--diagonals", type=int, default=100)
    s.add_argument("--lr", type=float, default=1.5e-4)
    s.add_argument("--lr-aux", type=float, default=1e-3)
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--batch", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--method", choices=["desv", "lsi"])
    s.add_argument("--no-smooth", action="store_true")
    s.add_argument("--no-clip", action="store_true")
    s.add_argument("--store-svd", action="store_true", help="keep SVD factors for audit")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("eval", help="compare plain and quantized outputs")
    s.add_argument("--model", required=True)
    s.add_argument("--quantized", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze", help="disturbance and expressiveness CSVs")
    s.add_argument("--orig", required=True)
    s.add_argument("--quantized", required=True)
    s.add_argument("--hidden", help="container of inputs; curves use block outputs")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except (DesvqError, ValueError, OSError, KeyError) as exc:
        print(f"desvq {args.command}: error: {exc}", file=sys.stderr)
        return 1
    logger.info("%s took %.2fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
