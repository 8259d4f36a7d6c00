import numpy as np

from desvq import gradcheck


def test_central_difference_restores_input():
    x = np.array([1.0, 2.0])
    d = gradcheck.central_difference(lambda: float(np.sum(x ** 3)), x, 1)
    assert abs(d - 12.0) < 1e-6 and x.tolist() == [1.0, 2.0]


def test_component_checks_pass():
    for rep in (gradcheck.check_band(3), gradcheck.check_smooth(3), gradcheck.check_quantizer(3)):
        assert rep.ok, rep.summary()


def test_block_check_covers_every_parameter_kind():
    rep = gradcheck.check_block(2, act="gelu")
    kinds = {e.name.split(".", 1)[1] for e in rep.entries}
    assert kinds == {"band", "log_scale", "shift", "gamma_logit", "beta_logit"}
    assert len(rep.entries) == 32 and rep.ok, rep.summary()


def test_report_detects_wrong_gradient():
    rep = gradcheck._report("x", [("p", (0,), 1.0, 1.1)])
    assert not rep.ok
