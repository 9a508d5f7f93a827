import numpy as np
import pytest

from gnntrack import autograd as ad
from gnntrack import checkpoint
from gnntrack.optim import Adam, adam_step


def _params(rng):
    return {"w": ad.Tensor(rng.normal(size=(3, 2)), requires_grad=True),
            "b": ad.Tensor(rng.normal(size=(1, 2)), requires_grad=True)}


def test_zero_gradient_no_decay_is_fixed_point(rng):
    params = _params(rng)
    before = {k: p.data.copy() for k, p in params.items()}
    opt = Adam(params, lr=1e-3, weight_decay=0.0)
    for _ in range(5):
        opt.step({k: np.zeros_like(p.data) for k, p in params.items()})
    for k in params:
        assert np.array_equal(params[k].data, before[k])


def test_first_step_unit_gradient_matches_scalar_hand_computation():
    p = ad.Tensor([[0.3]], requires_grad=True)
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    opt = Adam({"p": p}, lr=lr, weight_decay=0.0, beta1=b1, beta2=b2, eps=eps)
    opt.step({"p": np.array([[1.0]])})
    m_hat = ((1 - b1) * 1.0) / (1 - b1)
    v_hat = ((1 - b2) * 1.0) / (1 - b2)
    expect = 0.3 - lr * m_hat / (v_hat ** 0.5 + eps)
    assert p.data[0, 0] == pytest.approx(expect, abs=1e-15)
    assert p.data[0, 0] - 0.3 == pytest.approx(-lr / (1 + eps), rel=1e-9)


def test_decay_only_scales_parameters():
    p = ad.Tensor([[2.0, -4.0]], requires_grad=True)
    opt = Adam({"p": p}, lr=1e-3, weight_decay=1e-5)
    opt.step({"p": np.zeros((1, 2))})
    np.testing.assert_array_equal(p.data, np.array([[2.0, -4.0]]) * (1 - 1e-8))


def test_non_finite_gradient_aborts_step(rng):
    params = _params(rng)
    before = {k: p.data.copy() for k, p in params.items()}
    opt = Adam(params)
    grads = {k: np.zeros_like(p.data) for k, p in params.items()}
    grads["b"][0, 1] = np.nan
    with pytest.raises(FloatingPointError, match="b"):
        opt.step(grads)
    assert opt.step_count == 0
    for k in params:
        assert np.array_equal(params[k].data, before[k])


def test_step_counter_increases(rng):
    params = _params(rng)
    opt = Adam(params)
    for k in range(1, 4):
        adam_step(opt, {n: np.ones_like(p.data) for n, p in params.items()})
        assert opt.step_count == k


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    tensors = {"a": rng.normal(size=(4, 3)), "b": np.array([1e-300, np.pi, -0.0, 1 / 3]),
               "c": rng.normal(size=(2, 1, 2))}
    path = tmp_path / "ck.json"
    checkpoint.save(path, tensors, {"L": 6})
    loaded, meta = checkpoint.load(path)
    assert meta == {"L": 6}
    for k, v in tensors.items():
        assert loaded[k].shape == v.shape
        assert loaded[k].tobytes() == v.tobytes()


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        checkpoint.load(path)
