import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetgrasp.errors import ConfigError, ContractError, ShapeError
from hetgrasp.nncore import Adam, ModelParams, Tensor, no_grad, ops, parameter
from hetgrasp.nncore.gradcheck import gradcheck, standard_cases
from hetgrasp.nncore.params import load_checkpoint, save_checkpoint


@pytest.mark.parametrize("seed", range(3))
def test_gradcheck_every_op(seed):
    for name, f, inputs in standard_cases(np.random.default_rng(seed)):
        assert gradcheck(f, inputs) < 1e-3, name


def test_trivial_values():
    assert ops.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    v = np.array([[0.3, -1.2, 4.0]])
    assert np.array_equal(ops.mean_over_set(Tensor(np.repeat(v, 5, 0)), [5]).data, v)
    x = parameter(3.0)
    (x * x).backward()
    assert x.grad == pytest.approx(6.0)


def brute_correlation(x, w, stride):
    kh, kw = w.shape
    ho = (x.shape[0] - kh) // stride + 1
    wo = (x.shape[1] - kw) // stride + 1
    out = np.zeros((ho, wo))
    for i in range(ho):
        for j in range(wo):
            for a in range(kh):
                for b in range(kw):
                    out[i, j] += x[i * stride + a, j * stride + b] * w[a, b]
    return out


@pytest.mark.parametrize("kernel,stride", [(3, 1), (2, 1), (3, 2), (5, 1)])
def test_conv2d_matches_brute_correlation(kernel, stride):
    rng = np.random.default_rng(kernel * 10 + stride)
    x = rng.normal(size=(5, 5))
    w = rng.normal(size=(kernel, kernel))
    out = ops.conv2d(Tensor(x[None, :, :, None]), Tensor(w[:, :, None, None]), Tensor(np.zeros(1)), stride).data
    assert out.shape[1] == (5 - kernel) // stride + 1
    assert np.allclose(out[0, :, :, 0], brute_correlation(x, w, stride), atol=1e-12)


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 5, 5, 2))), Tensor(np.zeros((3, 3, 1, 4))), Tensor(np.zeros(4)))
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


def test_backward_contracts():
    x = parameter(np.ones(3))
    with pytest.raises(ContractError):
        (x * 2.0).backward()
    with pytest.raises(ContractError):
        Tensor(1.0).backward()


def test_backward_accumulates_until_zeroed():
    x = parameter(2.0)
    (x * x).backward()
    (x * x).backward()
    assert x.grad == pytest.approx(8.0)
    x.zero_grad()
    (x * 0.0).backward()
    assert x.grad == 0.0


def test_non_finite_values_raise():
    with pytest.raises(FloatingPointError):
        ops.log(parameter(np.array([0.0, 1.0])))


def test_no_grad_records_nothing():
    x = parameter(np.ones(2))
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad


def test_bce_values():
    assert ops.binary_cross_entropy(Tensor([0.5]), [1]).item() == pytest.approx(np.log(2))
    eps = 1e-7
    assert ops.binary_cross_entropy(Tensor([1 - eps]), [1]).item() < 2 * eps
    assert np.isfinite(ops.binary_cross_entropy(Tensor([0.0]), [1]).item())


def test_bce_matches_task_target_loop():
    rng = np.random.default_rng(0)
    T, M = 4, 6
    p = rng.uniform(0.01, 0.99, size=(T, M))
    y = rng.integers(0, 2, size=(T, M))
    total = 0.0
    for t in range(T):
        for i in range(M):
            total += -(y[t, i] * np.log(p[t, i]) + (1 - y[t, i]) * np.log(1 - p[t, i]))
    assert ops.binary_cross_entropy(Tensor(p.reshape(-1, 1)), y.reshape(-1, 1)).item() == pytest.approx(total / (T * M), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 15), st.integers(0, 2**31))
def test_mean_over_set_permutation_is_bit_exact(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 8)) * 10 ** rng.uniform(-3, 3, size=(n, 1))
    base = ops.mean_over_set(Tensor(x), [n]).data
    perm = rng.permutation(n)
    assert np.array_equal(ops.mean_over_set(Tensor(x[perm]), [n]).data, base)
    assert np.allclose(ops.mean_over_set(Tensor(np.concatenate([x, x])), [2 * n]).data, base, rtol=1e-14, atol=1e-14)


def test_empty_set_aggregates_to_zero():
    out = ops.mean_over_set(Tensor(np.zeros((0, 3))), [0])
    assert np.array_equal(out.data, np.zeros((1, 3)))
    att = ops.dot_product_attention(Tensor(np.ones((2, 3))), Tensor(np.zeros((0, 3))), Tensor(np.zeros((0, 3))), [2], [0])
    assert np.array_equal(att.data, np.zeros((2, 3)))


def test_adam_behaviour():
    with pytest.raises(ConfigError):
        Adam({"w": parameter(1.0)}, lr=0.0)
    w = parameter(np.array([1.0, -2.0]))
    opt = Adam({"w": w}, lr=0.1)
    opt.step({"w": np.zeros(2)})
    assert np.array_equal(w.data, [1.0, -2.0])
    v = parameter(1.0)
    opt = Adam({"v": v}, lr=0.1)
    (v * v).backward()
    opt.step()
    assert v.data < 1.0


def test_adam_converges_on_quadratic():
    # f(w) = (w - c)^T A (w - c), optimum at c
    A = np.array([[3.0, 0.5], [0.5, 1.0]])
    c = np.array([0.7, -1.3])
    w = parameter(np.zeros(2))
    opt = Adam({"w": w}, lr=0.05)
    for step in range(200):
        d = w - Tensor(c)
        loss = (d.reshape(1, 2) @ Tensor(A) @ d.reshape(2, 1)).sum()
        opt.zero_grad()
        loss.backward()
        lr = 0.05 if step < 150 else 0.01
        opt.lr = lr
        opt.step()
    assert np.linalg.norm(w.data - c) < 1e-3


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    p = ModelParams(init_seed=7, meta={"kind": "test"})
    p.add("b.w", rng.normal(size=(3, 4)))
    p.add("a.b", rng.normal(size=4) * 1e-300)
    digest = save_checkpoint(p, tmp_path / "m.ckpt")
    q = load_checkpoint(tmp_path / "m.ckpt")
    assert q.init_seed == 7 and q.meta == {"kind": "test"}
    for k in p:
        assert np.array_equal(p[k].data, q[k].data)
    assert q.digest() == digest
    with pytest.raises(ContractError):
        p.add("a.b", np.zeros(1))
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.ckpt")
