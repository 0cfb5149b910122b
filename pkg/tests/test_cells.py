import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmukit import cells
from rmukit.cells import CellParams, RMUState, init_params, param_count, memory_estimate, unroll
from rmukit.errors import ConfigurationError, IntegrityError, UnsupportedSchemeError
from rmukit.training import grad_check, randomized

TANH1 = 0.7615941559557649
SIG1 = 0.7310585786300049
SIG2 = 0.8807970779778823


def constant_params(kind, d_in, d_hid, value=0.0, **overrides):
    arrays = {n: np.full(s, value) for n, s in cells.param_shapes(kind, d_in, d_hid).items()}
    arrays.update({k: np.full(arrays[k].shape, v) for k, v in overrides.items()})
    return CellParams(kind, d_in, d_hid, arrays)


def step(params, x, state=None):
    state = state or cells.zero_state(params.kind, params.d_hid)
    return cells.STEP[params.kind](params, state, np.asarray(x, dtype=float))


# --- hand-evaluated steps -----------------------------------------------------

def test_rmu_zero_params_fixed_point():
    p = constant_params("rmu", 3, 2)
    state, cache = step(p, [0.4, -2.0, 7.0])
    np.testing.assert_array_equal(cache.s, 0.0)
    np.testing.assert_array_equal(cache.f_plus, 0.5)
    np.testing.assert_array_equal(cache.f_minus, 0.5)
    for v in (state.c_plus, state.c_minus, state.h):
        np.testing.assert_array_equal(v, 0.0)


def test_rmu_constant_qoe_single_step():
    p = init_params("rmu", 1, 1, "constant_qoe")
    state, cache = step(p, [1.0])
    assert cache.s[0] == pytest.approx(-TANH1, rel=1e-12)
    assert cache.f_plus[0] == pytest.approx(SIG2, rel=1e-12)
    assert cache.f_minus[0] == pytest.approx(SIG2, rel=1e-12)
    assert state.c_plus[0] == 0.0
    assert state.c_minus[0] == pytest.approx(TANH1, rel=1e-12)
    assert state.h[0] == pytest.approx(-0.6420149920119997, rel=1e-12)


def test_rmu_zero_stimulus_decays_memories():
    rng = np.random.default_rng(4)
    p = randomized(init_params("rmu", 2, 3), seed=1)
    p.arrays.update(W_s=np.zeros((3, 3)), U_s=np.zeros((2, 3)), b_s=np.zeros(3))
    prev = RMUState(rng.uniform(-1, 1, 3), rng.uniform(0, 1, 3), rng.uniform(0, 1, 3))
    state, cache = step(p, rng.normal(size=2), prev)
    np.testing.assert_array_equal(cache.s, 0.0)
    np.testing.assert_array_equal(state.c_plus, cache.f_plus * prev.c_plus)
    np.testing.assert_array_equal(state.c_minus, cache.f_minus * prev.c_minus)
    assert np.all(state.c_plus <= prev.c_plus) and np.all(state.c_minus <= prev.c_minus)


def test_lstm_zero_params():
    p = constant_params("lstm", 2, 2)
    state, cache = step(p, [3.0, -1.0])
    for g in (cache.i, cache.f, cache.o):
        np.testing.assert_array_equal(g, 0.5)
    np.testing.assert_array_equal(cache.c_tilde, 0.0)
    np.testing.assert_array_equal(state.c, 0.0)
    np.testing.assert_array_equal(state.h, 0.0)


def test_lstm_unit_weights_single_step():
    p = constant_params("lstm", 1, 1, value=1.0, b_i=0.0, b_f=0.0, b_o=0.0, b_c=0.0)
    state, cache = step(p, [1.0])
    for g in (cache.i, cache.f, cache.o):
        assert g[0] == pytest.approx(SIG1, rel=1e-12)
    assert cache.c_tilde[0] == pytest.approx(TANH1, rel=1e-12)
    assert state.c[0] == pytest.approx(0.5567699411459397, rel=1e-12)
    # hand value: sigma(1) * tanh(sigma(1) * tanh(1))
    assert state.h[0] == pytest.approx(0.36960635293570576, rel=1e-12)


def test_gru_candidate_only_single_step():
    p = constant_params("gru", 1, 1, W_h=1.0, U_h=1.0)
    state, cache = step(p, [1.0])
    assert cache.r[0] == 0.5 and cache.z[0] == 0.5
    assert cache.h_tilde[0] == pytest.approx(TANH1, rel=1e-12)
    assert state.h[0] == pytest.approx(0.3807970779778824, rel=1e-12)


def test_gru_reset_applies_before_recurrent_matrix():
    # with h_prev != 0 the candidate must see W_h (r * h_prev), not r * (W_h h_prev)
    p = constant_params("gru", 1, 2, W_h=0.0, U_h=0.0)
    p.arrays["W_h"] = np.array([[1.0, 2.0], [3.0, 4.0]])
    p.arrays["b_r"] = np.array([0.0, 100.0])  # r = (0.5, 1)
    prev = cells.GRUState(np.array([0.2, -0.6]))
    _, cache = step(p, [0.0], prev)
    expected = np.tanh(np.array([0.5 * 0.2, -0.6]) @ p["W_h"])
    np.testing.assert_allclose(cache.h_tilde, expected, rtol=1e-14)


def test_step_is_deterministic():
    p = randomized(init_params("rmu", 3, 4), seed=9)
    x = np.random.default_rng(0).normal(size=3)
    a, _ = step(p, x)
    b, _ = step(p, x)
    for f in ("h", "c_plus", "c_minus"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()


@pytest.mark.parametrize("kind", cells.CELL_KINDS)
def test_step_rejects_wrong_dimensions(kind):
    p = init_params(kind, 3, 2)
    with pytest.raises(ConfigurationError):
        step(p, [1.0, 2.0])
    with pytest.raises(ConfigurationError):
        step(p, [1.0, 2.0, 3.0], cells.zero_state(kind, 5))


def test_w_acts_on_hidden_and_u_on_input():
    # d_in != d_hid makes the convention observable through the shapes alone
    p = init_params("rmu", 5, 2)
    assert p["W_s"].shape == (2, 2) and p["U_s"].shape == (5, 2)
    trace = unroll(p, np.zeros((3, 5)))
    assert trace.hs.shape == (3, 2)


# --- backward -------------------------------------------------------------------

@pytest.mark.parametrize("kind", cells.CELL_KINDS)
def test_zero_upstream_gradient_gives_zero_gradients(kind):
    p = randomized(init_params(kind, 2, 3), seed=0)
    trace = unroll(p, np.random.default_rng(1).normal(size=(4, 2)))
    grads, dxs = cells.backward(p, trace, np.zeros((4, 3)))
    assert all(not g.any() for g in grads.values())
    assert not dxs.any()


@pytest.mark.parametrize("kind", cells.CELL_KINDS)
@pytest.mark.parametrize("seed", range(3))
def test_backward_matches_finite_differences(kind, seed):
    p = randomized(init_params(kind, 2, 2), seed=seed)
    report = grad_check(p, T=3, seed=seed)
    assert report.passed, str(report)


def test_stimulus_branch_blocks_gradient_to_previous_memory():
    p = constant_params("rmu", 1, 1, b_s=2.0)  # s = tanh(2) > 0.5 * 0.1
    prev = RMUState(np.zeros(1), np.array([0.1]), np.zeros(1))
    trace = unroll(p, np.zeros((1, 1)), state=prev)
    assert not trace.caches[0].winners_plus[0]

    def h_of(c_prev):
        st = RMUState(np.zeros(1), np.array([c_prev]), np.zeros(1))
        return unroll(p, np.zeros((1, 1)), state=st).hs[0, 0]

    # h does not depend on C+_prev at all in a neighbourhood of the point
    assert h_of(0.1 + 1e-3) == h_of(0.1) == h_of(0.1 - 1e-3)


def test_backward_routes_gradient_to_recorded_winner():
    # two steps: step 1 writes C+ from the stimulus, step 2 keeps the decayed value
    p = constant_params("rmu", 1, 1)
    p.arrays["U_s"] = np.array([[1.0]])
    xs = np.array([[2.0], [-0.01]])
    trace = unroll(p, xs)
    assert not trace.caches[0].winners_plus[0] and trace.caches[1].winners_plus[0]
    report = grad_check(p, instance={"xs": xs, "weights": np.array([[0.0], [1.0]])})
    assert report.passed, str(report)


def test_backward_detects_mismatched_trace():
    p = init_params("rmu", 2, 3)
    trace = unroll(p, np.zeros((4, 2)))
    with pytest.raises(IntegrityError):
        cells.backward(init_params("lstm", 2, 3), trace, np.zeros(3))
    with pytest.raises(IntegrityError):
        cells.backward(init_params("rmu", 2, 4), trace, np.zeros(3))
    with pytest.raises(IntegrityError):
        cells.backward(p, trace, np.zeros((2, 3)))
    trace.caches.pop()
    with pytest.raises(IntegrityError):
        cells.backward(p, trace, np.zeros(3))


def test_final_only_gradient_equals_per_step_with_zeros():
    p = randomized(init_params("lstm", 2, 3), seed=2)
    trace = unroll(p, np.random.default_rng(3).normal(size=(5, 2)))
    g = np.random.default_rng(4).normal(size=3)
    per_step = np.zeros((5, 3))
    per_step[-1] = g
    a, da = cells.backward(p, trace, g)
    b, db = cells.backward(p, trace, per_step)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    np.testing.assert_array_equal(da, db)


# --- initialisation and accounting ---------------------------------------------

def test_constant_qoe_values():
    p = init_params("rmu", 1, 1, "constant_qoe")
    assert p["U_s"].tolist() == [[-1.0]] and p["W_s"].tolist() == [[1.0]]
    assert p["b_s"].tolist() == [0.0]
    assert p["b_f_plus"].tolist() == [1.0] and p["b_f_minus"].tolist() == [1.0]
    for name in ("W_f_plus", "U_f_plus", "W_f_minus", "U_f_minus"):
        assert p[name].tolist() == [[1.0]]


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_constant_qoe_is_rmu_only(kind):
    with pytest.raises(UnsupportedSchemeError):
        init_params(kind, 1, 1, "constant_qoe")


def test_unknown_scheme():
    with pytest.raises(UnsupportedSchemeError):
        init_params("rmu", 1, 1, "xavier")


@pytest.mark.parametrize("kind", cells.CELL_KINDS)
def test_uniform_scaled_is_seeded_and_bounded(kind):
    a, b = init_params(kind, 3, 4, seed=5), init_params(kind, 3, 4, seed=5)
    c = init_params(kind, 3, 4, seed=6)
    assert all(a[n].tobytes() == b[n].tobytes() for n in a.names)
    assert any(a[n].tobytes() != c[n].tobytes() for n in a.names)
    for n in a.names:
        if n.startswith("b_"):
            expected = 1.0 if n[2:] in cells.FORGET_GATES[kind] else 0.0
            np.testing.assert_array_equal(a[n], expected)
        else:
            assert np.all(np.abs(a[n]) <= 0.5)


def test_init_rejects_empty_widths():
    with pytest.raises(ConfigurationError):
        init_params("rmu", 0, 3)


def test_param_count_examples():
    assert param_count("lstm", 36, 32) == 8832
    assert param_count("rmu", 36, 32) == 6624
    assert 4 * param_count("rmu", 36, 32) == 3 * param_count("lstm", 36, 32)
    assert [param_count(k, 1, 1) for k in ("lstm", "gru", "rmu")] == [12, 9, 9]


@pytest.mark.parametrize("kind", cells.CELL_KINDS)
@pytest.mark.parametrize("n1,n2", [(1, 1), (2, 3), (36, 32), (75, 8)])
def test_param_count_matches_allocation(kind, n1, n2):
    assert init_params(kind, n1, n2).size == param_count(kind, n1, n2)


def test_memory_estimate_formulas():
    n1, n2 = 36, 32
    assert memory_estimate("lstm", n1, n2) == n1 + 6 * n2 + 4 * (n1 * n2 + n2 * n2)
    assert memory_estimate("gru", n1, n2) == n1 + 4 * n2 + 3 * (n1 * n2 + n2 * n2)
    assert memory_estimate("rmu", n1, n2) == n1 + 6 * n2 + 3 * (n1 * n2 + n2 * n2)


# --- properties -----------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d_in=st.integers(1, 4), d_hid=st.integers(1, 5),
       T=st.integers(1, 30))
def test_rmu_states_stay_bounded(seed, d_in, d_hid, T):
    rng = np.random.default_rng(seed)
    # |pre-activation| <= d_in + d_hid + 1 < 19, below where float64 tanh rounds to 1
    arrays = {n: rng.uniform(-1, 1, s) for n, s in cells.param_shapes("rmu", d_in, d_hid).items()}
    trace = unroll(CellParams("rmu", d_in, d_hid, arrays), rng.uniform(-1, 1, (T, d_in)))
    for s in trace.states[1:]:
        assert np.all(np.abs(s.h) < 1)
        assert np.all((s.c_plus >= 0) & (s.c_plus < 1))
        assert np.all((s.c_minus >= 0) & (s.c_minus < 1))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_rmu_sign_routing(seed):
    rng = np.random.default_rng(seed)
    d_in, d_hid = 2, 4
    p = CellParams("rmu", d_in, d_hid,
                   {n: rng.normal(size=s) for n, s in cells.param_shapes("rmu", d_in, d_hid).items()})
    prev = RMUState(rng.uniform(-1, 1, d_hid), rng.uniform(0, 1, d_hid), rng.uniform(0, 1, d_hid))
    state, cache = step(p, rng.normal(size=d_in), prev)
    pos, neg = cache.s > 0, cache.s < 0
    assert np.all(state.c_minus[pos] <= prev.c_minus[pos])
    assert np.all(state.c_plus[neg] <= prev.c_plus[neg])
    assert math.isfinite(float(state.h.sum()))
