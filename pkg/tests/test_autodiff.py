import numpy as np
import pytest

from molfields import autodiff as ad
from molfields.optim import Adam, Lamb, make_optimizer


def fd_check(f, x, h=1e-6, tol=1e-6):
    """Compare reverse-mode gradient of scalar f at x with central differences."""
    p = ad.parameter(x)
    (g,) = ad.grad(f(p), [p])
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        num[idx] = (f(ad.Tensor(x + e)).data - f(ad.Tensor(x - e)).data) / (2 * h)
    np.testing.assert_allclose(g, num, rtol=tol, atol=tol)


OPS = {
    "sin": lambda t: ad.tsum(ad.sin(t)),
    "tanh": lambda t: ad.tsum(ad.tanh(t) * 3.0),
    "gelu": lambda t: ad.tsum(ad.gelu(t)),
    "softplus": lambda t: ad.tsum(ad.softplus(t)),
    "square": lambda t: ad.mean(ad.square(t)),
    "softmax": lambda t: ad.tsum(ad.softmax(t, -1) * np.arange(4.0)),
    "matmul": lambda t: ad.tsum(ad.sin(t @ np.ones((4, 2)) * 0.3)),
    "rmatmul": lambda t: ad.tsum(ad.sin(ad.as_tensor(np.ones((2, 3))) @ t)),
    "transpose": lambda t: ad.tsum(ad.transpose(t, (1, 0)) @ np.arange(12.0).reshape(3, 4)),
    "reshape": lambda t: ad.tsum(ad.sin(t.reshape(4, 3))),
    "getitem": lambda t: ad.tsum(ad.square(t[1:, ::2])),
    "fancy": lambda t: ad.tsum(ad.square(t[np.array([0, 0, 2])])),
    "concat": lambda t: ad.tsum(ad.sin(ad.concat([t, t * 2.0], axis=1))),
    "sum_axis": lambda t: ad.tsum(ad.square(ad.tsum(t, axis=0))),
    "mean_keep": lambda t: ad.tsum(ad.square(t - ad.mean(t, axis=1, keepdims=True))),
    "broadcast": lambda t: ad.tsum(ad.sin(t + np.ones((2, 3, 4)))),
    "abs": lambda t: ad.tsum(ad.tabs(t)),
    "sub_div": lambda t: ad.tsum((1.0 - t) / 3.0),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name, rng):
    x = rng.normal(size=(3, 4)) + 0.1
    fd_check(OPS[name], x)


def test_layer_norm_gradient(rng):
    x = rng.normal(size=(5, 6))
    g = rng.normal(size=6)
    b = rng.normal(size=6)
    w = rng.normal(size=(5, 6))
    fd_check(lambda t: ad.tsum(ad.layer_norm(t, ad.Tensor(g), ad.Tensor(b)) * w), x)
    fd_check(lambda t: ad.tsum(ad.layer_norm(ad.Tensor(x), t, ad.Tensor(b)) * w), g)
    fd_check(lambda t: ad.tsum(ad.layer_norm(ad.Tensor(x), ad.Tensor(g), t) * w), b)


def test_batched_matmul_gradient(rng):
    B = rng.normal(size=(2, 4, 3))
    fd_check(lambda t: ad.tsum(ad.sin(t @ B)), rng.normal(size=(2, 5, 4)))
    A = rng.normal(size=(2, 5, 4))
    fd_check(lambda t: ad.tsum(ad.sin(ad.Tensor(A) @ t)), B)


def test_vector_matrix_gradient(rng):
    W = rng.normal(size=(4, 3))
    fd_check(lambda t: ad.tsum(ad.sin(t @ W)), rng.normal(size=4))


def test_shared_subexpression_accumulates():
    x = ad.parameter(np.array([2.0]))
    y = x * x
    z = y + y
    (g,) = ad.grad(ad.tsum(z), [x])
    assert g[0] == pytest.approx(8.0)


def test_unused_parameter_has_zero_grad():
    x, y = ad.parameter(np.ones(3)), ad.parameter(np.ones(2))
    gx, gy = ad.grad(ad.tsum(ad.square(x)), [x, y])
    assert np.all(gy == 0) and np.all(gx == 2)


def test_dropout_off_without_rng():
    x = ad.Tensor(np.ones(10))
    assert ad.dropout(x, 0.5, None) is x


def test_dropout_scales_kept_entries():
    out = ad.dropout(ad.Tensor(np.ones(10_000)), 0.25, np.random.default_rng(0)).data
    assert set(np.unique(out)) <= {0.0, 1 / 0.75}
    assert abs(out.mean() - 1) < 0.05


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.ones(3)}
    opt = Adam(p, lr=0.1)
    for _ in range(5):
        opt.step({"w": np.zeros(3)})
    np.testing.assert_array_equal(p["w"], 1.0)


def test_adam_first_step_is_sign_step():
    g = np.array([3.0, -0.2, 1e-3])
    p = {"w": np.zeros(3)}
    Adam(p, lr=0.01).step({"w": g})
    np.testing.assert_allclose(p["w"], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-6)


def test_lamb_trust_ratio_one_equals_adam():
    g = np.array([1.0, -1.0, 1.0, -1.0])
    w0 = np.array([1.0, 1.0, -1.0, -1.0])  # |w| = 2 = |first Adam direction|
    pa, pl = {"w": w0.copy()}, {"w": w0.copy()}
    Adam(pa, lr=0.1).step({"w": g})
    Lamb(pl, lr=0.1).step({"w": g})
    np.testing.assert_allclose(pa["w"], pl["w"], rtol=1e-7)


def test_lamb_zero_weights_uses_ratio_one():
    pa, pl = {"w": np.zeros(2)}, {"w": np.zeros(2)}
    Adam(pa, lr=0.1).step({"w": np.ones(2)})
    Lamb(pl, lr=0.1).step({"w": np.ones(2)})
    np.testing.assert_allclose(pa["w"], pl["w"])


def test_optimizer_rejects_non_finite():
    opt = make_optimizer("adam", {"w": np.zeros(2)}, 0.1)
    with pytest.raises(FloatingPointError):
        opt.step({"w": np.array([np.nan, 0.0])})
    with pytest.raises(ValueError):
        make_optimizer("sgd", {}, 0.1)
