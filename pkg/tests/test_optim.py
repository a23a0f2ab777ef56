import numpy as np
import pytest

from maskint.errors import ConfigError
from maskint.optim import AdamW, clip_global_norm, learning_rate


def test_learning_rate_warmup_and_decay():
    assert learning_rate(0, 100, 1.0, warmup_steps=4) == pytest.approx(0.25)
    assert learning_rate(3, 100, 1.0, warmup_steps=4) == pytest.approx(1.0)
    assert learning_rate(4, 100, 1.0, warmup_steps=4) == pytest.approx(1.0)
    assert learning_rate(52, 100, 1.0, warmup_steps=4) == pytest.approx(0.5)
    assert learning_rate(100, 100, 1.0, warmup_steps=4) == pytest.approx(0.0, abs=1e-12)
    assert learning_rate(60, 100, 0.3, decay="constant") == 0.3
    with pytest.raises(ConfigError):
        learning_rate(10, 100, 1.0, decay="step")


def test_clip_global_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    clipped, norm = clip_global_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose(clipped["a"], [0.6, 0.0])
    np.testing.assert_allclose(clipped["b"], [[0.8]])
    unchanged, _ = clip_global_norm(grads, 10.0)
    assert unchanged is grads


def test_adamw_first_step_is_sign_step():
    params = {"w": np.ones((2, 2), dtype=np.float32), "b": np.zeros(2, dtype=np.float32)}
    grads = {"w": np.array([[2.0, -0.5], [1e-3, -7.0]]), "b": np.array([0.1, -0.1])}
    AdamW(weight_decay=0.0).step(params, grads, lr=0.01)
    np.testing.assert_allclose(params["w"], 1.0 - 0.01 * np.sign(grads["w"]), atol=1e-5)
    np.testing.assert_allclose(params["b"], [-0.01, 0.01], atol=1e-6)


def test_adamw_decays_matrices_only():
    params = {"w": np.ones((2, 2), dtype=np.float32), "b": np.ones(2, dtype=np.float32)}
    AdamW(weight_decay=0.5).step(params, {}, lr=0.1)
    np.testing.assert_allclose(params["w"], 0.95, atol=1e-6)
    np.testing.assert_array_equal(params["b"], 1.0)
