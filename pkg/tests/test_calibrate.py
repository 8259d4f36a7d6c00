from dataclasses import replace

import numpy as np
import pytest

from desvq import calibrate as c
from desvq.errors import CalibrationError, InvalidInputError, ShapeError
from desvq.quantizer import IntCodes, QuantConfig, QuantParams
from desvq.transform import SmoothParams

from fixtures import gaussian_layer_fixture, toy_mlp
from oracles import adam_ref


def small_cfg(**kw):
    base = dict(bits_w=4, steps=20, n_diag=2, seed=0)
    base.update(kw)
    return c.TrainConfig(**base)


def test_plain_forward_single_layer():
    rng = np.random.default_rng(0)
    layer = c.LinearLayer("l", rng.standard_normal((3, 2)), rng.standard_normal(2))
    x = rng.standard_normal((4, 3))
    assert np.allclose(c.block_forward(c.Block([layer]), x), x @ layer.w + layer.bias)


def test_zero_input_relu():
    model = toy_mlp(act="relu", blocks=1)
    for layer in model[0].layers:
        layer.bias[:] = 0.0
    assert np.all(c.block_forward(model[0], np.zeros((3, 16))) == 0)


def test_block_shape_errors():
    with pytest.raises(ShapeError):
        c.Block([c.LinearLayer("a", np.ones((3, 4)), np.ones(4)),
                 c.LinearLayer("b", np.ones((5, 2)), np.ones(2))])
    with pytest.raises(ShapeError):
        c.block_forward(toy_mlp()[0], np.ones((2, 5)))
    with pytest.raises(ValueError):
        c.Block([c.LinearLayer("a", np.ones((3, 4)), np.ones(4))], "tanh")


def test_near_lossless_matches_plain():
    model = toy_mlp(blocks=1)
    x = np.random.default_rng(1).standard_normal((32, 16))
    cfg = small_cfg(bits_w=16, bits_a=16, steps=0, learn_clip=False)
    q, _ = c.calibrate_block(model[0], x, cfg)
    ref = c.block_forward(model[0], x)
    assert np.linalg.norm(q.forward(x) - ref) <= 1e-3 * np.linalg.norm(ref)


def test_known_loss_hand_case():
    block = c.Block([c.LinearLayer("l", np.array([[0.4]]), np.zeros(1))])
    cfg = QuantConfig(4, "per-tensor")
    qp = QuantParams(np.array([[1.0]]), np.array([[0]]), np.array([[0.0]]), np.array([[15.0]]))
    ql = c.QuantizedLayer("l", IntCodes(np.array([[0]]), 4), qp, cfg, None,
                          SmoothParams.identity(1), np.zeros(1))
    assert c.block_loss(block, c.QuantizedBlock([ql]), np.ones((1, 1))) == pytest.approx(0.16)


def test_loss_zero_when_unquantized():
    model = toy_mlp(blocks=1)
    x = np.random.default_rng(2).standard_normal((8, 16))
    assert c.block_loss(model[0], None, x) == 0.0


def test_adamw_step():
    p, st = c.adamw_step(np.array([1.0, 2.0]), np.zeros(2), c.AdamState.zeros_like(np.zeros(2)), 0.1)
    assert p.tolist() == [1.0, 2.0] and st.t == 1
    p, _ = c.adamw_step(np.array([0.0]), np.array([1.0]), c.AdamState.zeros_like(np.zeros(1)), 0.1)
    assert p[0] == pytest.approx(-0.1, rel=1e-6)
    # elementwise and matching a scalar loop
    rng = np.random.default_rng(3)
    gs = rng.standard_normal((6, 2))
    p, st = np.array([0.5, -1.0]), c.AdamState.zeros_like(np.zeros(2))
    for g in gs:
        p, st = c.adamw_step(p, g, st, 0.01)
    for k, p0 in enumerate([0.5, -1.0]):
        assert p[k] == pytest.approx(adam_ref(p0, gs[:, k], 0.01), rel=1e-12)
    with pytest.raises(CalibrationError):
        c.adamw_step(np.zeros(1), np.array([np.nan]), c.AdamState.zeros_like(np.zeros(1)), 0.1)


def test_train_config_validation():
    with pytest.raises(InvalidInputError):
        c.TrainConfig(lr_desv=0.0)
    with pytest.raises(InvalidInputError):
        c.TrainConfig(weight_decay=0.1)
    with pytest.raises(InvalidInputError):
        c.TrainConfig(method="adam")
    assert c.TrainConfig(bits_a=16).act_cfg is None
    assert c.TrainConfig(bits_a=8).act_cfg.bits == 8


def test_on_grid_weights_stay_put():
    w = np.array([[-1.0, 2.0], [0.0, 1.0], [2.0, -1.0]])
    block = c.Block([c.LinearLayer("l", w, np.zeros(2))])
    x = np.random.default_rng(4).standard_normal((16, 3))
    cfg = small_cfg(bits_w=2, n_diag=1, learn_smooth=False, learn_clip=False)
    q, rec = c.calibrate_block(block, x, cfg)
    assert rec.initial_loss < 1e-20 and rec.final_loss < 1e-20
    assert np.max(np.abs(q.layers[0].band.values)) < 1e-3


def test_final_not_worse_than_initial():
    model = toy_mlp(blocks=1)
    x = np.random.default_rng(5).standard_normal((64, 16))
    for cfg in (small_cfg(bits_w=3), small_cfg(bits_w=3, bits_a=8), small_cfg(method="lsi")):
        _, rec = c.calibrate_block(model[0], x, cfg)
        assert rec.final_loss <= rec.initial_loss
        assert len(rec.losses) == cfg.steps


def test_minibatch_path():
    model = toy_mlp(blocks=1)
    x = np.random.default_rng(6).standard_normal((64, 16))
    _, rec = c.calibrate_block(model[0], x, small_cfg(batch=16))
    assert rec.final_loss <= rec.initial_loss


def test_determinism():
    model = toy_mlp()
    calib = [np.random.default_rng(7).standard_normal((32, 16))]
    cfg = small_cfg(bits_w=3, bits_a=8)
    q1, r1 = c.calibrate_model(model, calib, cfg)
    q2, r2 = c.calibrate_model(model, calib, cfg)
    for a, b in zip(r1, r2):
        assert a.losses == b.losses
    for b1, b2 in zip(q1, q2):
        for l1, l2 in zip(b1.layers, b2.layers):
            assert np.array_equal(l1.codes.codes, l2.codes.codes)


def test_lsi_equals_zero_band_trajectory():
    block, x, cfg = gaussian_layer_fixture()
    cfg = replace(cfg, steps=30)
    _, r_band = c.calibrate_block(block, x, replace(cfg, n_diag=0, method="desv"))
    _, r_lsi = c.calibrate_block(block, x, replace(cfg, method="lsi"))
    assert r_band.losses == r_lsi.losses


def test_wide_layer_is_transposed():
    rng = np.random.default_rng(8)
    block = c.Block([c.LinearLayer("w", rng.standard_normal((4, 10)), np.zeros(10))])
    q, rec = c.calibrate_block(block, rng.standard_normal((32, 4)), small_cfg())
    assert q.layers[0].transposed
    assert q.layers[0].band.values.shape == (5, 4)
    assert rec.final_loss <= rec.initial_loss


def test_model_propagates_quantized_inputs():
    model = toy_mlp()
    x = np.random.default_rng(9).standard_normal((32, 16))
    _, recs = c.calibrate_model(model, [x], small_cfg(bits_w=2), keep_inputs=True)
    plain_in = c.block_forward(model[0], x)
    assert np.array_equal(recs[0].block_input, x)
    assert not np.allclose(recs[1].block_input, plain_in)


def test_single_block_model_matches_block():
    model = toy_mlp(blocks=1)
    x = np.random.default_rng(10).standard_normal((32, 16))
    cfg = small_cfg()
    _, recs = c.calibrate_model(model, [x[:16], x[16:]], cfg)
    _, rec = c.calibrate_block(model[0], x, cfg)
    assert recs[0].losses == rec.losses


def test_model_errors():
    with pytest.raises(InvalidInputError):
        c.calibrate_model(toy_mlp(), [], small_cfg())
    with pytest.raises(ShapeError, match="block 0"):
        c.calibrate_model(toy_mlp(), [np.ones((4, 5))], small_cfg())


def test_divergence_aborts():
    model = toy_mlp(blocks=1)
    x = np.random.default_rng(11).standard_normal((32, 16))
    cfg = small_cfg(lr_desv=1.0, lr_aux=1.0, steps=200, learn_clip=False)
    with pytest.raises(CalibrationError, match="10x initial") as err:
        c.calibrate_block(model[0], x, cfg)
    rec = err.value.record
    assert rec.steps == 21 and len(rec.losses) == 21


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_gradient_aborts_with_record():
    model = toy_mlp(blocks=1)
    x = np.random.default_rng(11).standard_normal((32, 16))
    cfg = small_cfg(lr_desv=50.0, lr_aux=50.0, steps=200, bits_w=2)
    with pytest.raises(CalibrationError, match="non-finite") as err:
        c.calibrate_block(model[0], x, cfg)
    assert err.value.record is not None


def test_rtn_baseline_matches_quantizer():
    block, x, cfg = gaussian_layer_fixture()
    rtn = c.rtn_block(block, cfg)
    from desvq import quantizer
    w = block.layers[0].w
    out, _ = quantizer.fake_quant(w, cfg.weight_cfg)
    assert np.array_equal(rtn.layers[0].dequantized_weight(), out)
