import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from heed import autograd as ag
from heed.autograd import Tensor


def t(x, grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def test_forward_examples():
    np.testing.assert_allclose(ag.softmax_last_dim(t([0.0, 0.0])).data, [0.5, 0.5])
    ce = ag.cross_entropy_rows(np.array([[0.0, 1.0]]), t([[0.25, 0.75]]))
    assert ce.data[0] == pytest.approx(-np.log(0.75)) == pytest.approx(0.28768207)
    a = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_array_equal(ag.matmul(t(np.eye(3)), t(a)).data, a)


def test_shape_errors_name_op():
    with pytest.raises(ValueError, match="matmul"):
        ag.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))
    with pytest.raises(ValueError, match="add"):
        ag.add(t(np.ones((2, 3))), t(np.ones((3, 2))))


def test_backward_sum_and_nonscalar():
    x = t([1.0, 2.0, 3.0])
    ag.backward(ag.sum(x))
    np.testing.assert_array_equal(x.grad, [1, 1, 1])
    with pytest.raises(ValueError):
        ag.backward(ag.mul_scalar(x, 2.0))


def test_grad_accumulates_over_uses():
    x = t([2.0])
    y = ag.add(ag.mul(x, x), ag.mul_scalar(x, 3.0))
    ag.backward(ag.sum(y))
    assert x.grad[0] == pytest.approx(7.0)


def test_frobenius_at_zero_is_finite():
    x = t(np.zeros((2, 2)))
    ag.backward(ag.frobenius_norm(x))
    assert np.all(np.isfinite(x.grad))


def test_cross_entropy_clamp():
    p = t([[1.0, 0.0]])
    ce = ag.cross_entropy_rows(np.array([[0.0, 1.0]]), p)
    assert ce.data[0] == pytest.approx(-np.log(1e-12))


def test_no_grad_builds_no_graph():
    x = t([1.0])
    with ag.no_grad():
        y = ag.mul_scalar(x, 2.0)
    assert not y.requires_grad


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 6)),
              elements=st.floats(-20, 20)), st.data())
def test_softmax_ce_gradient_closed_form(logits, data):
    n, k = logits.shape
    cls = data.draw(st.lists(st.integers(0, k - 1), min_size=n, max_size=n))
    gold = np.eye(k)[cls]
    z = t(logits)
    p = ag.softmax_last_dim(z)
    ag.backward(ag.sum(ag.cross_entropy_rows(gold, p)))
    expected = p.data - gold
    # stay clear of the log clamp, which cuts the gradient of tiny gold probabilities
    mask = (p.data.max(axis=-1) < 1 - 1e-9) & ((p.data * gold).sum(-1) > 1e-10)
    np.testing.assert_allclose(z.grad[mask], expected[mask], atol=1e-10)


def test_softmax_rows_sum_to_one():
    x = t(np.random.default_rng(1).normal(scale=30, size=(50, 7)))
    np.testing.assert_allclose(ag.softmax_last_dim(x).data.sum(-1), 1.0, atol=1e-12)


def test_linear_function_exact():
    w = t(np.random.default_rng(0).normal(size=(3, 2)))
    x = np.random.default_rng(1).normal(size=(4, 3))
    rep = ag.finite_diff_check(lambda: ag.sum(ag.matmul(Tensor(x), w)), {"w": w})
    assert rep.passed and rep.max_rel_error["w"] <= 1e-10


def test_mlp_matches_finite_differences():
    rng = np.random.default_rng(2)
    params = {"w1": t(rng.normal(size=(4, 5))), "b1": t(rng.normal(size=(5,))),
              "w2": t(rng.normal(size=(5, 3))), "g": t(rng.normal(size=(3,))), "b": t(rng.normal(size=(3,)))}
    x = Tensor(rng.normal(size=(6, 4)))
    gold = np.eye(3)[rng.integers(0, 3, 6)]

    def loss():
        h = ag.gelu(ag.add(ag.matmul(x, params["w1"]), params["b1"]))
        h = ag.tanh(ag.matmul(h, params["w2"]))
        h = ag.layer_norm(h, params["g"], params["b"])
        return ag.mean(ag.cross_entropy_rows(gold, ag.softmax_last_dim(h)))

    rep = ag.finite_diff_check(loss, params)
    assert rep.passed, rep.worst


def test_shape_ops_gradients():
    rng = np.random.default_rng(3)
    params = {"a": t(rng.normal(size=(2, 3, 4))), "b": t(rng.normal(size=(2, 3, 2))),
              "e": t(rng.normal(size=(5, 4)))}
    ids = np.array([[0, 4, 4], [1, 1, 2]])

    def loss():
        a = ag.add(params["a"], ag.embedding_lookup(params["e"], ids))
        c = ag.concat_last_dim([a, params["b"]])
        s = ag.stack([ag.getitem(c, 0), ag.getitem(c, 1)], axis=0)
        p = ag.permute(ag.reshape(s, (2, 3, 6)), (1, 0, 2))
        q = ag.l2_normalize_last_dim(ag.transpose_last_two(p))
        return ag.add(ag.sum(ag.mul(q, q)), ag.mean(ag.frobenius_norm(p)))

    rep = ag.finite_diff_check(loss, params)
    assert rep.passed, rep.worst


def test_corrupted_gradient_fails():
    w = t(np.random.default_rng(0).normal(size=(3,)))
    f = lambda: ag.sum(ag.mul(w, w))  # noqa: E731
    wrong = {"w": 2 * w.data + 0.1}
    assert not ag.finite_diff_check(f, {"w": w}, analytic=wrong).passed


def test_backward_deterministic():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(5, 6)), rng.normal(size=(6, 2))
    grads = []
    for _ in range(2):
        x, w = t(a), t(b)
        ag.backward(ag.sum(ag.softmax_last_dim(ag.matmul(x, w))))
        grads.append((x.grad.copy(), w.grad.copy()))
    assert all(np.array_equal(g1, g2) for g1, g2 in zip(*grads))
