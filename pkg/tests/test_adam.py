import numpy as np

from baf.nn import adam_init, adam_step


def test_zero_gradient_leaves_params_unchanged():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    state = adam_init(params, lr=0.1)
    before = params["w"].copy()
    adam_step(params, {"w": np.zeros(3)}, state)
    assert np.array_equal(params["w"], before)


def test_first_step_is_signed_lr_for_large_gradients():
    params = {"w": np.zeros(4)}
    g = np.array([3.0, -2.0, 0.5, -10.0])
    state = adam_init(params, lr=0.01)
    adam_step(params, {"w": g.copy()}, state)
    # First bias-corrected step reduces to -lr * g / (|g| + eps').
    assert np.allclose(params["w"], -0.01 * np.sign(g), atol=1e-6)


def _reference_adam(grads_per_step, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook reconstruction: explicit m-hat / v-hat sequences."""
    theta = np.zeros_like(grads_per_step[0])
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads_per_step, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta


def test_ten_steps_match_reference_formula():
    rng = np.random.default_rng(77)
    grads = [rng.standard_normal(6) for _ in range(10)]
    params = {"w": np.zeros(6)}
    state = adam_init(params, lr=0.003)
    for g in grads:
        adam_step(params, {"w": g.copy()}, state)
    expected = _reference_adam(grads, lr=0.003)
    assert np.max(np.abs(params["w"] - expected)) <= 1e-12
    assert state.step == 10


def test_moment_shapes_follow_params():
    params = {"a": np.zeros((2, 3)), "b": np.zeros(5)}
    state = adam_init(params, lr=0.1)
    assert state.m["a"].shape == (2, 3)
    assert state.v["b"].shape == (5,)
