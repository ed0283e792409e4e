"""SGD and Adam steps against closed-form oracles."""

import numpy as np
import pytest

from metareplay.optim import AdamState, adam_step, sgd_step
from metareplay.params import ParamMismatchError, ParamVector
from metareplay.tensor import Tensor


def pv(**named):
    return ParamVector([(k, Tensor(np.asarray(v, dtype=np.float32),
                                   requires_grad=True))
                        for k, v in named.items()])


def test_sgd_basic_arithmetic():
    out = sgd_step(pv(w=[1.0, 2.0]), pv(w=[1.0, 1.0]), lr=0.1)
    np.testing.assert_allclose(out["w"].data, [0.9, 1.9], rtol=1e-6)


def test_sgd_single_param_to_zero():
    out = sgd_step(pv(w=[1.0]), pv(w=[2.0]), lr=0.5)
    np.testing.assert_allclose(out["w"].data, [0.0], atol=1e-7)


def test_sgd_zero_lr_is_identity():
    params = pv(w=[1.0, -3.0])
    out = sgd_step(params, pv(w=[5.0, 5.0]), lr=0.0)
    np.testing.assert_array_equal(out["w"].data, params["w"].data)


def test_sgd_inputs_unmodified():
    params = pv(w=[1.0, 2.0])
    before = params["w"].data.copy()
    sgd_step(params, pv(w=[1.0, 1.0]), lr=0.1)
    np.testing.assert_array_equal(params["w"].data, before)


def test_sgd_misaligned_raises():
    with pytest.raises(ParamMismatchError):
        sgd_step(pv(w=[1.0]), pv(v=[1.0]), lr=0.1)


def test_sgd_is_pure():
    params, grads = pv(w=[2.0]), pv(w=[0.5])
    a = sgd_step(params, grads, lr=0.2)
    b = sgd_step(params, grads, lr=0.2)
    assert a["w"].data.tobytes() == b["w"].data.tobytes()


# ---------------------------------------------------------------------------
# adam

def adam_first_step_oracle(p, g, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Closed-form first Adam step in float64."""
    m = (1 - beta1) * g
    v = (1 - beta2) * g * g
    mh = m / (1 - beta1)
    vh = v / (1 - beta2)
    return p - lr * mh / (np.sqrt(vh) + eps)


def test_adam_first_step_matches_closed_form():
    g = np.array([0.3, -1.7, 0.01], dtype=np.float32)
    p = np.array([1.0, 2.0, -0.5], dtype=np.float32)
    out, state = adam_step(pv(w=p), pv(w=g), state=None, lr=1e-3)
    want = adam_first_step_oracle(p.astype(np.float64), g.astype(np.float64), 1e-3)
    np.testing.assert_allclose(out["w"].data, want, atol=1e-6)
    assert state.step == 1


def test_adam_first_step_magnitude_is_lr():
    # with bias correction the first step is lr * g/|g| for any g != 0
    g = np.array([0.3, -1.7, 123.0], dtype=np.float32)
    out, _ = adam_step(pv(w=[0.0, 0.0, 0.0]), pv(w=g), state=None, lr=1e-3)
    np.testing.assert_allclose(np.abs(out["w"].data), 1e-3, atol=1e-6)
    np.testing.assert_allclose(np.sign(out["w"].data), -np.sign(g))


def test_adam_zero_grad_no_decay_is_identity():
    params = pv(w=[1.0, -2.0])
    out, _ = adam_step(params, pv(w=[0.0, 0.0]), state=None, lr=1e-3)
    np.testing.assert_array_equal(out["w"].data, params["w"].data)


def test_adam_decay_before_adaptive_step():
    # param 1, grad 0: only the decoupled decay acts -> 1 - lr*wd exactly
    out, _ = adam_step(pv(w=[1.0]), pv(w=[0.0]), state=None, lr=1e-3,
                       weight_decay=1e-4)
    want = np.float32(1.0) - np.float32(1e-3) * np.float32(1e-4) * np.float32(1.0)
    assert out["w"].data[0] == want
    assert out["w"].data[0] == np.float32(1.0 - 1e-7)


def test_adam_two_steps_match_float64_reference():
    p = np.array([0.5, -1.0], dtype=np.float32)
    g1 = np.array([1.0, 2.0], dtype=np.float32)
    g2 = np.array([-0.5, 0.25], dtype=np.float32)
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8

    params, state = adam_step(pv(w=p), pv(w=g1), state=None, lr=lr)
    params, state = adam_step(params, pv(w=g2), state=state, lr=lr)

    p64 = p.astype(np.float64)
    m = np.zeros(2)
    v = np.zeros(2)
    for t, g in ((1, g1), (2, g2)):
        g = g.astype(np.float64)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        p64 = p64 - lr * mh / (np.sqrt(vh) + eps)
    np.testing.assert_allclose(params["w"].data, p64, atol=1e-6)
    assert state.step == 2


def test_adam_state_misalignment_raises():
    _, state = adam_step(pv(w=[1.0]), pv(w=[1.0]), state=None, lr=1e-3)
    with pytest.raises(ParamMismatchError):
        adam_step(pv(w=[1.0, 2.0]), pv(w=[1.0, 1.0]), state=state, lr=1e-3)


def test_adam_is_pure():
    params, grads = pv(w=[1.0]), pv(w=[0.7])
    a1, s1 = adam_step(params, grads, state=None, lr=1e-3)
    a2, s2 = adam_step(params, grads, state=None, lr=1e-3)
    assert a1["w"].data.tobytes() == a2["w"].data.tobytes()
    assert s1.m["w"].data.tobytes() == s2.m["w"].data.tobytes()
    b1, _ = adam_step(a1, grads, state=s1, lr=1e-3)
    b2, _ = adam_step(a1, grads, state=s1, lr=1e-3)
    assert b1["w"].data.tobytes() == b2["w"].data.tobytes()
