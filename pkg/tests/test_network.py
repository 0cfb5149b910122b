import numpy as np
import pytest

from rmukit import cells
from rmukit.errors import ConfigurationError, InputError, IntegrityError
from rmukit.network import AssessmentNet, build_net, net_backward, net_forward, net_param_shapes
from rmukit.training import grad_check, randomized


def zero_net(kind="rmu", d_feat=3, d_hid=2, **kw):
    shapes = net_param_shapes(kind, d_feat, d_hid, d_hid)
    return AssessmentNet(kind, d_feat, d_hid, d_hid, {k: np.zeros(s) for k, s in shapes.items()}, **kw)


def test_zero_network_predicts_zero():
    seq = np.random.default_rng(0).normal(size=(7, 3))
    for kind in cells.CELL_KINDS:
        pred, _ = net_forward(zero_net(kind), seq)
        assert pred == 0.0


def test_dropout_zero_train_equals_eval():
    net = build_net("rmu", 3, 4, seed=1, dropout_rate=0.0)
    seq = np.random.default_rng(1).normal(size=(6, 3))
    a, ta = net_forward(net, seq, mode="train", seed=3)
    b, _ = net_forward(net, seq, mode="eval")
    assert a == b
    assert ta.masks is None


def test_constant_qoe_network_single_step():
    net = build_net("rmu", 1, 1, init="constant_qoe")
    assert net.params["proj.W"].tolist() == [[1.0]] and net.params["head.W"].tolist() == [[1.0]]
    pred, _ = net_forward(net, np.array([[1.0]]))
    assert pred == pytest.approx(-0.6420149920119997, rel=1e-12)


def test_default_projection_width_is_hidden_width():
    net = build_net("lstm", 5, 3)
    assert net.d_proj == 3 and net.params["proj.W"].shape == (5, 3)
    assert build_net("lstm", 5, 3, d_proj=7).cell.d_in == 7


@pytest.mark.parametrize("kind", cells.CELL_KINDS)
def test_perfect_prediction_gives_zero_gradients(kind):
    net = build_net(kind, 3, 2, seed=4)
    pred, trace = net_forward(net, np.random.default_rng(2).normal(size=(5, 3)), mode="train", seed=0)
    g = net_backward(net, trace, targets=pred)
    assert g.loss == 0.0
    assert all(not v.any() for v in g.params.values())


@pytest.mark.parametrize("kind", cells.CELL_KINDS)
@pytest.mark.parametrize("output_mode", ["final_step", "per_step"])
@pytest.mark.parametrize("input_activation", ["identity", "tanh"])
def test_network_gradients_match_finite_differences(kind, output_mode, input_activation):
    net = build_net(kind, 3, 2, seed=0, dropout_rate=0.5, output_mode=output_mode,
                    input_activation=input_activation)
    report = grad_check(randomized(net, seed=7), T=5, seed=7)
    assert report.passed, str(report)


@pytest.mark.parametrize("kind", cells.CELL_KINDS)
def test_per_step_with_last_gradient_equals_final_step(kind):
    final = randomized(build_net(kind, 3, 2, output_mode="final_step"), seed=3)
    per = final.with_params(final.params)
    per.output_mode = "per_step"
    seq = np.random.default_rng(5).normal(size=(6, 3))
    pf, tf = net_forward(final, seq, mode="train", seed=9)
    pp, tp = net_forward(per, seq, mode="train", seed=9)
    assert pp[-1] == pf  # final-step prediction is unchanged by the mode switch
    gf = net_backward(final, tf, grad_output=np.array(0.7))
    upstream = np.zeros(6)
    upstream[-1] = 0.7
    gp = net_backward(per, tp, grad_output=upstream)
    for k in gf.params:
        np.testing.assert_array_equal(gf.params[k], gp.params[k])
    np.testing.assert_array_equal(gf.inputs, gp.inputs)


def test_inverted_dropout_preserves_expectation():
    net = build_net("rmu", 4, 3, seed=2, dropout_rate=0.5)
    seq = np.random.default_rng(8).normal(size=(5, 4))
    _, ref = net_forward(net, seq, mode="eval")
    total = np.zeros_like(ref.proj)
    n = 4000
    rng = np.random.default_rng(0)
    for _ in range(n):
        _, tr = net_forward(net, seq, mode="train", rng=rng)
        total += tr.proj * tr.masks
    mean = total / n
    assert np.abs(mean - ref.proj).sum() / np.abs(ref.proj).sum() < 0.02


def test_masks_are_replayed_from_seed():
    net = build_net("gru", 2, 3, seed=0)
    seq = np.ones((4, 2))
    a, ta = net_forward(net, seq, mode="train", seed=11)
    b, tb = net_forward(net, seq, mode="train", seed=11)
    assert a == b
    np.testing.assert_array_equal(ta.masks, tb.masks)
    assert set(np.unique(ta.masks)) <= {0.0, 2.0}


def test_forward_errors():
    net = build_net("rmu", 3, 2)
    with pytest.raises(InputError):
        net_forward(net, np.zeros((0, 3)))
    with pytest.raises(ConfigurationError):
        net_forward(net, np.zeros((4, 2)))
    with pytest.raises(ConfigurationError):
        net_forward(net, np.zeros((4, 3)), mode="predict")


def test_backward_rejects_foreign_trace():
    net = build_net("rmu", 3, 2)
    _, trace = net_forward(net, np.zeros((4, 3)))
    with pytest.raises(IntegrityError):
        net_backward(build_net("rmu", 3, 2, output_mode="per_step"), trace, targets=np.zeros(4))
    with pytest.raises(IntegrityError):
        net_backward(net, trace, targets=np.zeros(4))
    with pytest.raises(IntegrityError):
        net_backward(build_net("rmu", 5, 2), trace, targets=0.0)


def test_construction_validation():
    with pytest.raises(ConfigurationError):
        zero_net(dropout_rate=1.0)
    with pytest.raises(ConfigurationError):
        zero_net(output_mode="mean")
    with pytest.raises(ConfigurationError):
        build_net("rmu", 0, 2)
