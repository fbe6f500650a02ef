import numpy as np
import pytest

from steinmix.optim import Adagrad, Adam, Sgd, make_optimizer, optimizer_from_state


def test_sgd_scales_gradient():
    opt = Sgd(0.1)
    np.testing.assert_array_equal(opt.update(np.array([2.0, -4.0])), np.array([0.2, -0.4]))


def test_adam_matches_reference_loop():
    # straight transcription of the published update with bias correction
    rng = np.random.default_rng(8)
    grads = rng.normal(size=(12, 3))
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    m = np.zeros(3)
    v = np.zeros(3)
    opt = Adam(lr)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        want = lr * mhat / (np.sqrt(vhat) + eps)
        np.testing.assert_allclose(opt.update(g), want, rtol=1e-14)


def test_adam_first_step_is_learning_rate_signed():
    opt = Adam(0.03)
    step = opt.update(np.array([5.0, -0.2]))
    np.testing.assert_allclose(step, [0.03, -0.03], rtol=1e-6)


def test_adagrad_matches_reference_loop():
    rng = np.random.default_rng(9)
    grads = rng.normal(size=(10, 2))
    lr, eps = 0.5, 1e-10
    acc = np.zeros(2)
    opt = Adagrad(lr)
    for g in grads:
        acc = acc + g * g
        want = lr * g / (np.sqrt(acc) + eps)
        np.testing.assert_allclose(opt.update(g), want, rtol=1e-14)


def test_sign_preserving_updates_are_ascent_directions():
    # sgd and adagrad scale each coordinate by a positive factor; adam's
    # momentum only guarantees this on the first step
    rng = np.random.default_rng(10)
    for opt in (Sgd(0.1), Adagrad(0.1)):
        for _ in range(5):
            g = rng.normal(size=4)
            assert float(opt.update(g) @ g) > 0.0
    g = rng.normal(size=4)
    assert float(Adam(0.1).update(g) @ g) > 0.0


def test_state_roundtrip_resumes_bitwise():
    rng = np.random.default_rng(11)
    grads = rng.normal(size=(9, 3))
    for kind in ("sgd", "adam", "adagrad"):
        a = make_optimizer(kind, 0.07)
        b = make_optimizer(kind, 0.07)
        for g in grads[:4]:
            a.update(g)
            b.update(g)
        resumed = optimizer_from_state(a.state())
        for g in grads[4:]:
            np.testing.assert_array_equal(resumed.update(g), b.update(g))


def test_state_serializes_to_plain_json_types():
    import json

    opt = Adam(0.01)
    opt.update(np.array([1.0, 2.0]))
    encoded = json.dumps(opt.state())
    decoded = optimizer_from_state(json.loads(encoded))
    np.testing.assert_array_equal(
        decoded.update(np.array([0.5, -0.5])), opt.update(np.array([0.5, -0.5]))
    )


def test_make_optimizer_validation():
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", 0.1)
    with pytest.raises(ValueError):
        make_optimizer("adam", -0.1)
