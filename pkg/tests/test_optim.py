import numpy as np
import pytest

from geograph.optim import Adam


def reference_adam(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return p


def test_first_step_moves_by_learning_rate():
    p = np.array([1.0, -2.0])
    Adam({"p": p}, lr=0.1).step({"p": np.array([3.0, -0.5])})
    np.testing.assert_allclose(p, [0.9, -1.9], atol=1e-8)


def test_matches_scalar_reference():
    grads = [0.3, -1.2, 0.7, 0.05, 2.0]
    p = np.array([0.5])
    opt = Adam({"p": p}, lr=0.01)
    for g in grads:
        opt.step({"p": np.array([g])})
    assert p[0] == pytest.approx(reference_adam(0.5, grads, 0.01), abs=1e-15)


def test_zero_lr_and_state_round_trip():
    p = np.array([1.0])
    opt = Adam({"p": p}, lr=0.0)
    opt.step({"p": np.array([1.0])})
    assert p[0] == 1.0 and opt.t == 1
    q = np.array([1.0])
    other = Adam({"q": q}, lr=0.0)
    other.load_state_dict({"t": 1, "lr": 0.0, "m": {"q": opt.m["p"]}, "v": {"q": opt.v["p"]}})
    assert other.m["q"][0] == opt.m["p"][0]


def test_negative_lr_rejected():
    with pytest.raises(ValueError):
        Adam({}, lr=-1)
