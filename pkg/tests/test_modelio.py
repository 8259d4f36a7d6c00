import json

import numpy as np
import pytest

from desvq import calibrate as c, modelio
from desvq.container import read_container, write_container
from desvq.errors import FormatError

from fixtures import toy_mlp


def quantize_toy(store_svd=False, **kw):
    model = toy_mlp()
    x = np.random.default_rng(0).standard_normal((32, 16))
    cfg = c.TrainConfig(**{"bits_w": 3, "bits_a": 8, "steps": 5, "n_diag": 2, **kw})
    qb, recs = c.calibrate_model(model, [x], cfg, keep_factors=store_svd)
    return model, x, cfg, qb, recs


def test_model_roundtrip(tmp_path):
    model = toy_mlp()
    modelio.save_model(tmp_path, model)
    back = modelio.load_model(tmp_path)
    for b0, b1 in zip(model, back):
        assert b0.act == b1.act
        for l0, l1 in zip(b0.layers, b1.layers):
            assert np.array_equal(l0.w.astype(np.float32), l1.w)


def test_quantized_roundtrip_forward(tmp_path):
    _, x, cfg, qb, recs = quantize_toy(store_svd=True)
    modelio.save_quantized(tmp_path, qb, cfg, recs)
    back = modelio.load_quantized(tmp_path)
    assert np.array_equal(c.model_forward(qb, x), c.model_forward(back, x))
    man = json.loads((tmp_path / modelio.MANIFEST).read_text())
    assert man["quant"]["n_diag"] == 2 and man["quant"]["act_bits"] == 8
    assert "svd_u" in man["blocks"][0]["layers"][0]["tensors"]
    lines = (tmp_path / modelio.RECORDS).read_text().splitlines()
    assert lines[0] == "block,step,loss" and len(lines) == 1 + 2 * cfg.steps


def test_svd_factors_optional(tmp_path):
    _, _, cfg, qb, _ = quantize_toy()
    modelio.save_quantized(tmp_path, qb, cfg)
    man = json.loads((tmp_path / modelio.MANIFEST).read_text())
    assert "svd_u" not in man["blocks"][0]["layers"][0]["tensors"]
    assert not (tmp_path / modelio.RECORDS).exists()


def test_dangling_reference_rejected(tmp_path):
    modelio.save_model(tmp_path, toy_mlp())
    tensors = read_container(tmp_path / modelio.TENSORS)
    del tensors["b0.l0.w"]
    write_container(tmp_path / modelio.TENSORS, tensors)
    with pytest.raises(FormatError, match="b0.l0.w"):
        modelio.load_model(tmp_path)


def test_shape_mismatch_rejected(tmp_path):
    modelio.save_model(tmp_path, toy_mlp())
    man = json.loads((tmp_path / modelio.MANIFEST).read_text())
    man["blocks"][0]["layers"][0]["shape"] = [3, 3]
    (tmp_path / modelio.MANIFEST).write_text(json.dumps(man))
    with pytest.raises(FormatError, match="shape"):
        modelio.load_model(tmp_path)


def test_kind_checks(tmp_path):
    modelio.save_model(tmp_path, toy_mlp())
    with pytest.raises(FormatError):
        modelio.load_quantized(tmp_path)
    assert isinstance(modelio.load_any(tmp_path)[0], c.Block)
