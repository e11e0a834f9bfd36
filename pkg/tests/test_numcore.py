import json

import numpy as np
import pytest

from scentgen import numcore
from scentgen.numcore import (
    MissingGradients,
    NotScalarLoss,
    ParamStore,
    ShapeMismatch,
    Tensor,
    UnknownParam,
    adam_step,
    backward,
    load_checkpoint,
    matmul,
    mlp_forward,
    save_checkpoint,
)


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(eye, m).data, m.data)


def test_matmul_analytic():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_transpose_property(rng):
    for _ in range(20):
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(3, 5))
        left = matmul(Tensor(a), Tensor(b)).data.T
        right = matmul(Tensor(b.T), Tensor(a.T)).data
        assert np.abs(left - right).max() < 1e-12


def test_matmul_identity_associativity(rng):
    a = rng.normal(size=(3, 3))
    eye = np.eye(3)
    out = matmul(matmul(Tensor(a), Tensor(eye)), Tensor(eye)).data
    assert np.abs(out - a).max() < 1e-12


# ------------------------------------------------------------------- MLPs


def make_mlp(params, name, n_in, n_hidden, n_out, rng):
    numcore.init_mlp(params, name, n_in, n_hidden, n_out, rng)


def test_mlp_zero_weights_zero_output():
    params = ParamStore()
    params.add("f.w1", np.zeros((3, 4)))
    params.add("f.b1", np.zeros(4))
    params.add("f.w2", np.zeros((4, 2)))
    params.add("f.b2", np.zeros(2))
    out = mlp_forward(params, "f", Tensor(np.ones((5, 3))))
    assert np.array_equal(out.data, np.zeros((5, 2)))


def test_mlp_identity_construction():
    # Shift the hidden layer deep into SiLU's linear region, then undo the shift.
    params = ParamStore()
    shift = 30.0
    params.add("f.w1", np.eye(3))
    params.add("f.b1", np.full(3, shift))
    params.add("f.w2", np.eye(3))
    params.add("f.b2", np.full(3, -shift))
    x = np.array([[0.5, 1.0, 2.0]])
    out = mlp_forward(params, "f", Tensor(x))
    assert np.abs(out.data - x).max() < 1e-3


def test_mlp_shape_contract(rng):
    params = ParamStore()
    make_mlp(params, "f", 3, 8, 1, rng)
    out = mlp_forward(params, "f", Tensor(rng.normal(size=(1, 3))))
    assert out.data.shape == (1, 1)


def test_mlp_unknown_param():
    params = ParamStore()
    with pytest.raises(UnknownParam):
        mlp_forward(params, "ghost", Tensor(np.zeros((1, 2))))


def test_mlp_bad_width(rng):
    params = ParamStore()
    make_mlp(params, "f", 3, 8, 1, rng)
    with pytest.raises(ShapeMismatch):
        mlp_forward(params, "f", Tensor(np.zeros((1, 5))))


# --------------------------------------------------------------- backward


def test_backward_linear_outer_product(rng):
    params = ParamStore()
    w = params.add("w", rng.normal(size=(3, 4)))
    x = np.asarray([[1.0, 2.0, 3.0]])
    loss = numcore.sum_(matmul(Tensor(x), w))
    params.zero_grad()
    backward(loss)
    # d/dW sum(x W) = x broadcast across columns
    assert np.abs(w.grad - np.repeat(x.T, 4, axis=1)).max() < 1e-12


def test_backward_stationary_point():
    params = ParamStore()
    x = params.add("x", np.array([1.0, -2.0, 3.0]))
    c = Tensor(np.array([1.0, -2.0, 3.0]))
    diff = numcore.sub(x, c)
    loss = numcore.sum_(numcore.mul(diff, diff))
    params.zero_grad()
    backward(loss)
    assert np.abs(x.grad).max() == 0.0


def test_backward_requires_scalar():
    with pytest.raises(NotScalarLoss):
        backward(Tensor(np.zeros(3)))


def test_backward_finite_difference_small_net(rng):
    """Random two-layer nets: analytic gradients match central differences."""
    for seed in range(20):
        local = np.random.default_rng(seed)
        params = ParamStore()
        make_mlp(params, "f", 4, 6, 2, local)
        x = local.normal(size=(3, 4))
        target = local.normal(size=(3, 2))

        def loss_value():
            out = mlp_forward(params, "f", Tensor(x))
            diff = numcore.sub(out, Tensor(target))
            return numcore.mean_(numcore.mul(diff, diff))

        loss = loss_value()
        params.zero_grad()
        backward(loss)
        eps = 1e-5
        for name in params.names():
            tensor = params[name]
            flat = tensor.data.reshape(-1)
            grad = tensor.grad.reshape(-1)
            numeric = np.zeros_like(flat)
            for k in range(flat.size):
                keep = flat[k]
                flat[k] = keep + eps
                up = loss_value().item()
                flat[k] = keep - eps
                down = loss_value().item()
                flat[k] = keep
                numeric[k] = (up - down) / (2 * eps)
            denom = np.linalg.norm(grad) + np.linalg.norm(numeric) + 1e-12
            assert np.linalg.norm(grad - numeric) / denom < 1e-4, (seed, name)


def test_gather_segment_sum_gradients(rng):
    params = ParamStore()
    x = params.add("x", rng.normal(size=(4, 3)))
    idx = np.array([0, 2, 2, 3])
    seg = np.array([0, 0, 1, 1])
    out = numcore.segment_sum(numcore.gather(x, idx), seg, 2)
    loss = numcore.sum_(numcore.mul(out, out))
    params.zero_grad()
    backward(loss)
    eps = 1e-6
    flat = x.data.reshape(-1)
    for k in range(flat.size):
        keep = flat[k]
        flat[k] = keep + eps
        up = numcore.sum_(
            numcore.mul(
                numcore.segment_sum(numcore.gather(x, idx), seg, 2),
                numcore.segment_sum(numcore.gather(x, idx), seg, 2),
            )
        ).item()
        flat[k] = keep - eps
        down = numcore.sum_(
            numcore.mul(
                numcore.segment_sum(numcore.gather(x, idx), seg, 2),
                numcore.segment_sum(numcore.gather(x, idx), seg, 2),
            )
        ).item()
        flat[k] = keep
        numeric = (up - down) / (2 * eps)
        assert abs(numeric - x.grad.reshape(-1)[k]) < 1e-5


def test_finiteness_propagation(rng):
    params = ParamStore()
    make_mlp(params, "f", 3, 8, 2, rng)
    for _ in range(50):
        x = rng.normal(size=(4, 3)) * 10
        out = mlp_forward(params, "f", Tensor(x))
        assert np.isfinite(out.data).all()


# ------------------------------------------------------------------- adam


def test_adam_zero_gradient_no_move():
    params = ParamStore()
    w = params.add("w", np.array([1.0, 2.0]))
    params.zero_grad()
    adam_step(params, lr=0.1)
    assert np.array_equal(w.data, np.array([1.0, 2.0]))


def test_adam_descent_direction():
    params = ParamStore()
    w = params.add("w", np.array([0.0]))
    for _ in range(50):
        params.zero_grad()
        w.grad = np.array([1.0])
        adam_step(params, lr=0.01)
    assert w.data[0] < 0  # moves opposite the (positive) gradient


def test_adam_single_step_matches_reference():
    lr, beta1, beta2, eps = 0.1, 0.9, 0.999, 1e-8
    g = 1.0
    # hand-rolled recurrence, step 1
    m = (1 - beta1) * g
    v = (1 - beta2) * g * g
    m_hat = m / (1 - beta1)
    v_hat = v / (1 - beta2)
    expected_delta = -lr * m_hat / (np.sqrt(v_hat) + eps)

    params = ParamStore()
    w = params.add("w", np.array([0.0]))
    w.grad = np.array([g])
    adam_step(params, lr=lr, betas=(beta1, beta2), eps=eps)
    assert w.data[0] == pytest.approx(expected_delta, rel=1e-12)


def test_adam_missing_gradients():
    params = ParamStore()
    params.add("w", np.array([1.0]))
    with pytest.raises(MissingGradients):
        adam_step(params)


# ------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip(tmp_path, rng):
    params = ParamStore()
    make_mlp(params, "f", 3, 4, 2, rng)
    params.zero_grad()
    for name in params.names():
        params[name].grad = rng.normal(size=params[name].data.shape)
    adam_step(params)
    meta = {"note": "round-trip", "steps": 100}
    path = tmp_path / "ckpt.json"
    save_checkpoint(params, str(path), meta)
    loaded, got_meta = load_checkpoint(str(path))
    assert got_meta == meta
    assert loaded.names() == params.names()
    for name in params.names():
        assert np.array_equal(loaded[name].data, params[name].data)
        assert np.array_equal(loaded._adam_m[name], params._adam_m[name])
    assert loaded.adam_steps == params.adam_steps


def test_checkpoint_deterministic_bytes(tmp_path, rng):
    params = ParamStore()
    make_mlp(params, "f", 3, 4, 2, rng)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_checkpoint(params, str(p1), {"k": 1})
    save_checkpoint(params, str(p2), {"k": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_version_guard(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"format_version": 99, "params": {}}))
    with pytest.raises(ValueError):
        load_checkpoint(str(path))


def test_paramstore_gradients_view(rng):
    params = ParamStore()
    w = params.add("w", np.ones(3))
    params.zero_grad()
    assert np.array_equal(params.gradients["w"], np.zeros(3))
    with pytest.raises(UnknownParam):
        params["ghost"]
