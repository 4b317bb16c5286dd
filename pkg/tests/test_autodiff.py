import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from east import autodiff as ad


def leaf(x):
    return ad.tensor(x, requires_grad=True)


class TestForward:
    def test_matmul_dot(self):
        out = ad.forward_op("matmul", ad.tensor([[1, 2]]), ad.tensor([[3], [4]]))
        assert out.data.tolist() == [[11.0]]

    def test_relu(self):
        assert ad.forward_op("relu", ad.tensor([-1, 0, 2])).data.tolist() == [0, 0, 2]

    def test_softmax_symmetric(self):
        np.testing.assert_array_equal(ad.forward_op("softmax", ad.tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_softmax_survives_huge_logits(self):
        p = ad.softmax(ad.tensor([[1000.0, 0.0, -1000.0]])).data
        assert np.all(np.isfinite(p)) and p[0, 0] == 1.0

    def test_l1_normalize_rows(self):
        out = ad.l1_normalize(ad.tensor([[1.0, 3.0], [2.0, 2.0]])).data
        np.testing.assert_allclose(out, [[0.25, 0.75], [0.5, 0.5]])

    def test_dropout_mask_and_identity(self):
        a = ad.tensor([[1.0, 2.0]])
        np.testing.assert_array_equal(ad.dropout(a, np.array([[2.0, 0.0]])).data, [[2.0, 0.0]])
        np.testing.assert_array_equal(ad.dropout(a, None).data, [[1.0, 2.0]])

    def test_unknown_op(self):
        with pytest.raises(ValueError, match="unknown op"):
            ad.forward_op("conv2d", ad.tensor([1.0]))

    def test_matmul_shape_error_names_op_and_shapes(self):
        with pytest.raises(ad.ShapeError) as info:
            ad.matmul(ad.tensor([[1.0, 2.0]]), ad.tensor([[1.0, 2.0]]))
        assert "matmul" in str(info.value) and "(1, 2)" in str(info.value)

    def test_elementwise_shape_error(self):
        with pytest.raises(ad.ShapeError):
            ad.add(ad.tensor([1.0, 2.0]), ad.tensor([1.0, 2.0, 3.0]))

    def test_divide_by_zero_is_an_error(self):
        with pytest.raises(ad.ZeroDivision):
            ad.divide(ad.tensor([1.0]), ad.tensor([0.0]))

    def test_safe_divide_guards_zero(self):
        out = ad.safe_divide(ad.tensor([1.0, 4.0]), ad.tensor([0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 2.0])

    def test_heaviside_op_is_registered(self):
        out = ad.forward_op("piecewise-linear-heaviside", ad.tensor([[0.7, 0.2, 0.1]]), 0.2)
        np.testing.assert_allclose(out.data, [[0.8153846153846154, 0.1777777777777778, 0.0888888888888889]],
                                   atol=1e-15)


class TestBackward:
    def test_sum_of_squares(self):
        x = leaf([1.0, 2.0])
        grads = ad.backward(ad.sum(x * x))
        np.testing.assert_array_equal(grads[x], [2.0, 4.0])
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_softmax_pick_first_at_symmetric_point(self):
        x = leaf([0.0, 0.0])
        grads = ad.backward(ad.sum(ad.softmax(x) * np.array([1.0, 0.0])))
        np.testing.assert_allclose(grads[x], [0.25, -0.25], atol=1e-15)

    def test_relu_inactive(self):
        x = leaf([-1.0])
        assert ad.backward(ad.sum(ad.relu(x)))[x].tolist() == [0.0]

    def test_non_scalar_root(self):
        x = leaf([1.0, 2.0])
        with pytest.raises(ad.ShapeError):
            ad.backward(x * 2.0)

    def test_repeat_backward_is_identical(self):
        x = leaf([[0.3, -1.2], [2.0, 0.5]])
        root = ad.sum(ad.log(ad.softmax(x)) * np.array([[1.0, 0.0], [0.0, 1.0]]))
        first = ad.backward(root)[x].copy()
        second = ad.backward(root)[x]
        np.testing.assert_array_equal(first, second)

    def test_shared_subexpression_accumulates(self):
        x = leaf([3.0])
        y = x * x
        grads = ad.backward(ad.sum(y + y))
        assert grads[x].tolist() == [12.0]

    def test_broadcast_gradient_is_reduced(self):
        W = leaf(np.ones((2, 3)))
        b = leaf(np.zeros(3))
        root = ad.sum(ad.matmul(W, ad.tensor(np.eye(3))) + b)
        grads = ad.backward(root)
        np.testing.assert_array_equal(grads[b], [2.0, 2.0, 2.0])

    def test_constants_get_no_gradient(self):
        x = leaf([1.0])
        c = ad.tensor([5.0])
        grads = ad.backward(ad.sum(x * c))
        assert c not in grads and grads[x].tolist() == [5.0]


class TestGradCheck:
    def test_quadratic(self):
        report = ad.grad_check(lambda t: ad.sum(t * t), np.array([3.0]), eps=1e-5)
        assert report.max_rel_error < 1e-8 and report.passed

    def test_flags_wrong_gradient(self):
        def wrong(t):
            # forward is x**2 but backward claims 3x
            return ad.sum(ad._node(t.data**2, "bad", (t,), lambda g: (g * 3 * t.data,)))

        report = ad.grad_check(wrong, np.array([2.0]))
        assert not report.passed and report.flagged.tolist() == [0]

    def test_breakpoint_is_skipped(self):
        # third entry sits exactly on the lower breakpoint of the row's threshold
        T = 0.2
        p = np.array([[0.5, 0.3, 0.2]])
        tau = 0.4
        p[0, 2] = tau - 5 * T * tau / 2
        report = ad.grad_check(lambda t: ad.sum(ad.forward_op("piecewise-linear-heaviside", t, T)), p)
        assert report.skipped.any()
        assert any("near-breakpoint, skipped" in note for note in report.notes)

    def test_margin_widens_the_exclusion_zone(self):
        x = np.array([2e-5])
        plain = ad.grad_check(lambda t: ad.sum(ad.relu(t)), x, eps=1e-5)
        wide = ad.grad_check(lambda t: ad.sum(ad.relu(t)), x, eps=1e-5, margin=3.0)
        assert not plain.skipped.any() and wide.skipped.all()

    def test_rejects_bad_eps(self):
        with pytest.raises(ValueError):
            ad.grad_check(lambda t: ad.sum(t), np.zeros(1), eps=0.0)


SMOOTH_UNARY = [
    lambda t: ad.sum(ad.softmax(t) * np.arange(t.shape[-1])),
    lambda t: ad.sum(ad.log(ad.softmax(t))),
    lambda t: ad.sum(ad.sqrt(t * t + 1.0)),
    lambda t: ad.sum(ad.power(t * t + 0.5, 1.5)),
    lambda t: ad.sum(ad.l1_normalize(t * t + 0.1) * np.arange(t.shape[-1])),
    lambda t: ad.mean(ad.divide(t, t * t + 2.0)),
    lambda t: ad.sum(ad.matmul(t, ad.tensor(np.ones((t.shape[-1], 2)))) ** 2),
]


@given(
    which=st.integers(0, len(SMOOTH_UNARY) - 1),
    x=st.lists(st.floats(-2, 2), min_size=6, max_size=6),
)
def test_smooth_ops_match_finite_differences(which, x):
    report = ad.grad_check(SMOOTH_UNARY[which], np.array(x).reshape(2, 3), eps=1e-5, margin=3.0)
    assert report.max_rel_error < 1e-4 or report.checked == 0


@given(x=st.lists(st.floats(-2, 2), min_size=5, max_size=5))
def test_chain_rule_through_relu_matches_finite_differences(x):
    W = np.linspace(-1, 1, 15).reshape(5, 3)
    report = ad.grad_check(lambda t: ad.sum(ad.softmax(ad.relu(ad.matmul(t, ad.tensor(W))))
                                            * np.array([1.0, 2.0, 3.0])),
                           np.array([x]), margin=3.0)
    assert report.max_rel_error < 1e-4
