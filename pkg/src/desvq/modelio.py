"""Model directories: ``manifest.json`` plus a ``tensors.dsvq`` container.

A plain model manifest lists blocks, their nonlinearity and their layers with
references into the container. A quantized manifest additionally carries the
quantization config and, per layer, references to codes, per-group params,
smoothing params and the learned band (SVD factors only on request).
"""

import json
import os

import numpy as np

from . import desv
from .calibrate import Block, LinearLayer, QuantizedBlock, QuantizedLayer
from .container import read_container, write_container
from .errors import FormatError
from .numerics import SvdFactors
from .quantizer import ClipParams, IntCodes, QuantConfig, QuantParams
from .transform import SmoothParams

MANIFEST = "manifest.json"
TENSORS = "tensors.dsvq"
RECORDS = "calib_records.csv"
SUMMARY = "calib_summary.csv"


def _dump(path, manifest, tensors):
    os.makedirs(path, exist_ok=True)
    write_container(os.path.join(path, TENSORS), tensors)
    with open(os.path.join(path, MANIFEST), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def read_manifest(path):
    try:
        with open(os.path.join(path, MANIFEST), encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: manifest is not valid JSON: {exc}") from exc


def _refs(node):
    if isinstance(node, dict):
        for key, val in node.items():
            if key == "tensors" and isinstance(val, dict):
                yield from val.values()
            else:
                yield from _refs(val)
    elif isinstance(node, list):
        for item in node:
            yield from _refs(item)


def validate(manifest, tensors):
    """Reject manifests that reference tensors missing from the container."""
    missing = sorted({r for r in _refs(manifest) if r not in tensors})
    if missing:
        raise FormatError(f"manifest references missing tensors: {', '.join(missing)}")


def _load(path):
    manifest = read_manifest(path)
    tensors = read_container(os.path.join(path, TENSORS))
    validate(manifest, tensors)
    return manifest, tensors


def _check_shape(arr, shape, what):
    if tuple(arr.shape) != tuple(shape):
        raise FormatError(f"{what}: stored shape {arr.shape}, manifest says {tuple(shape)}")


# --------------------------------------------------------------------------
# plain models
# --------------------------------------------------------------------------


def save_model(path, model):
    blocks, tensors = [], {}
    for block in model:
        layers = []
        for layer in block.layers:
            wn, bn = f"{layer.name}.w", f"{layer.name}.b"
            tensors[wn] = layer.w.astype(np.float32)
            tensors[bn] = layer.bias.astype(np.float32)
            layers.append({
                "name": layer.name,
                "shape": [layer.in_dim, layer.out_dim],
                "tensors": {"weight": wn, "bias": bn},
            })
        blocks.append({"act": block.act, "layers": layers})
    _dump(path, {"kind": "model", "version": 1, "blocks": blocks}, tensors)


def _blocks_from(manifest, tensors):
    model = []
    for bspec in manifest["blocks"]:
        layers = []
        for lspec in bspec["layers"]:
            t = lspec["tensors"]
            w = tensors[t["weight"]]
            _check_shape(w, lspec["shape"], lspec["name"])
            layers.append(LinearLayer(lspec["name"], w.astype(np.float64),
                                      tensors[t["bias"]].astype(np.float64)))
        model.append(Block(layers, bspec["act"]))
    return model


def load_model(path):
    manifest, tensors = _load(path)
    if manifest.get("kind") != "model":
        raise FormatError(f"{path}: expected a plain model, found kind={manifest.get('kind')!r}")
    return _blocks_from(manifest, tensors)


# --------------------------------------------------------------------------
# quantized models
# --------------------------------------------------------------------------


def save_quantized(path, qblocks, cfg, records=None):
    blocks, tensors = [], {}
    for qb in qblocks:
        layers = []
        for ql in qb.layers:
            n = ql.name
            code_dtype = np.uint8 if ql.wcfg.bits <= 8 else np.int32
            refs = {
                "codes": f"{n}.codes",
                "scale": f"{n}.scale",
                "zero": f"{n}.zero",
                "clip_lo": f"{n}.clip_lo",
                "clip_hi": f"{n}.clip_hi",
                "degenerate": f"{n}.degenerate",
                "smooth_scale": f"{n}.smooth_scale",
                "smooth_shift": f"{n}.smooth_shift",
                "bias": f"{n}.bias_t",
            }
            tensors[refs["codes"]] = ql.codes.codes.astype(code_dtype)
            tensors[refs["scale"]] = np.asarray(ql.qparams.scale, dtype=np.float64)
            tensors[refs["zero"]] = np.asarray(ql.qparams.zero, dtype=np.int32)
            tensors[refs["clip_lo"]] = np.asarray(ql.qparams.clip_lo, dtype=np.float64)
            tensors[refs["clip_hi"]] = np.asarray(ql.qparams.clip_hi, dtype=np.float64)
            tensors[refs["degenerate"]] = np.asarray(ql.qparams.degenerate, dtype=np.uint8)
            tensors[refs["smooth_scale"]] = ql.smooth.scale
            tensors[refs["smooth_shift"]] = ql.smooth.shift
            tensors[refs["bias"]] = np.asarray(ql.bias_t, dtype=np.float64)
            if ql.clip is not None:
                refs["clip_gamma"] = f"{n}.clip_gamma"
                refs["clip_beta"] = f"{n}.clip_beta"
                tensors[refs["clip_gamma"]] = ql.clip.gamma
                tensors[refs["clip_beta"]] = ql.clip.beta
            if ql.band is not None:
                refs["band"] = f"{n}.band"
                tensors[refs["band"]] = ql.band.values
            if ql.factors is not None:
                for key in ("u", "s", "v"):
                    refs[f"svd_{key}"] = f"{n}.svd_{key}"
                    tensors[refs[f"svd_{key}"]] = getattr(ql.factors, key)
            layers.append({
                "name": n,
                "shape": [ql.in_dim, ql.out_dim],
                "transposed": bool(ql.transposed),
                "n_diag": ql.band.n_diag if ql.band is not None else None,
                "tensors": refs,
            })
        blocks.append({"act": qb.act, "layers": layers})
    manifest = {
        "kind": "quantized",
        "version": 1,
        "quant": {
            "weight": cfg.weight_cfg.to_dict(),
            "act_bits": cfg.act_cfg.bits if cfg.act_cfg is not None else None,
            "method": cfg.method,
            "n_diag": int(cfg.n_diag),
            "train": {
                "lr_desv": cfg.lr_desv,
                "lr_aux": cfg.lr_aux,
                "weight_decay": cfg.weight_decay,
                "betas": list(cfg.betas),
                "epsilon": cfg.epsilon,
                "steps": cfg.steps,
                "batch": cfg.batch,
                "seed": cfg.seed,
            },
        },
        "blocks": blocks,
    }
    _dump(path, manifest, tensors)
    if records is not None:
        write_records(path, records)


def load_quantized(path):
    manifest, tensors = _load(path)
    if manifest.get("kind") != "quantized":
        raise FormatError(f"{path}: expected a quantized model, found kind={manifest.get('kind')!r}")
    q = manifest["quant"]
    wcfg = QuantConfig.from_dict(q["weight"])
    acfg = QuantConfig(q["act_bits"], "per-tensor") if q.get("act_bits") else None
    qblocks = []
    for bspec in manifest["blocks"]:
        layers = []
        for lspec in bspec["layers"]:
            t = {k: tensors[v] for k, v in lspec["tensors"].items()}
            _check_shape(t["codes"], lspec["shape"], lspec["name"])
            qp = QuantParams(t["scale"].astype(np.float64), t["zero"].astype(np.int64),
                             t["clip_lo"].astype(np.float64), t["clip_hi"].astype(np.float64),
                             t["degenerate"].astype(bool))
            clip = ClipParams(t["clip_gamma"], t["clip_beta"]) if "clip_gamma" in t else None
            band = None
            if "band" in t:
                band = desv.BandIncrement(int(lspec["n_diag"]), t["band"].shape[1], t["band"])
            factors = SvdFactors(t["svd_u"], t["svd_s"], t["svd_v"]) if "svd_u" in t else None
            layers.append(QuantizedLayer(
                lspec["name"], IntCodes(t["codes"].astype(np.int64), wcfg.bits), qp, wcfg, acfg,
                SmoothParams(t["smooth_scale"], t["smooth_shift"]), t["bias"].astype(np.float64),
                clip, band, factors, bool(lspec.get("transposed", False)),
            ))
        qblocks.append(QuantizedBlock(layers, bspec["act"]))
    return qblocks


def load_any(path):
    """A plain model (list of Block) or a quantized one (list of QuantizedBlock)."""
    kind = read_manifest(path).get("kind")
    if kind == "quantized":
        return load_quantized(path)
    return load_model(path)


def write_records(path, records):
    lines = ["block,step,loss"]
    for rec in records:
        lines += [f"{rec.name},{i},{loss!r}" for i, loss in enumerate(rec.losses)]
    with open(os.path.join(path, RECORDS), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    lines = ["block,initial_loss,final_loss,steps"]
    lines += [f"{r.name},{r.initial_loss!r},{r.final_loss!r},{r.steps}" for r in records]
    with open(os.path.join(path, SUMMARY), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")

