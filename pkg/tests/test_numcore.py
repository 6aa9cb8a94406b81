import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from agzsl import numcore as nc
from agzsl.numcore import Adam, Parameter, Rng, Tensor, backward, grad_check, max_relative_error


def triple_loop_matmul(a, b):
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def away_from_zero(rng, shape, margin=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin * 2, x)


class TestTensor:
    def test_values_are_float64_and_read_only(self):
        t = Tensor([1, 2, 3])
        assert t.value.dtype == np.float64
        with pytest.raises(ValueError):
            t.value[0] = 5.0

    def test_non_finite_input_is_rejected(self):
        with pytest.raises(nc.NumericalError):
            Tensor([1.0, np.nan])

    def test_non_finite_forward_result_is_rejected(self):
        with pytest.raises(nc.NumericalError):
            nc.exp(Tensor([1000.0]))

    def test_parameter_assign_checks_shape(self):
        p = Parameter(np.zeros(3))
        with pytest.raises(nc.ShapeError):
            p.assign(np.zeros(4))


class TestMatmul:
    def test_identity(self):
        m = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(nc.matmul(np.eye(3), m).value, m)

    def test_one_by_one(self):
        assert nc.matmul([[2.0]], [[3.0]]).value.tolist() == [[6.0]]

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
            np.testing.assert_allclose(nc.matmul(a, b).value, triple_loop_matmul(a, b), rtol=0, atol=1e-12)

    def test_inner_extent_mismatch(self):
        with pytest.raises(nc.ShapeError):
            nc.matmul(np.zeros((2, 3)), np.zeros((4, 2)))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(nc.softmax(np.zeros(3)).value, [1 / 3] * 3, atol=1e-15)

    def test_log_weights(self):
        np.testing.assert_allclose(nc.softmax([np.log(1.0), np.log(3.0)]).value, [0.25, 0.75], atol=1e-15)

    def test_large_inputs_are_stable(self):
        out = nc.softmax([1000.0, 1000.0]).value
        np.testing.assert_allclose(out, [0.5, 0.5])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-30, 30)), st.floats(-50, 50))
    def test_shift_invariance_and_normalisation(self, x, c):
        p = nc.softmax(x, axis=1).value
        np.testing.assert_allclose(p, nc.softmax(x + c, axis=1).value, atol=1e-12)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert (p > 0).all()

    def test_log_softmax_matches_log_of_softmax(self):
        x = np.random.default_rng(1).normal(size=(4, 6))
        np.testing.assert_allclose(nc.log_softmax(x, axis=1).value, np.log(nc.softmax(x, axis=1).value),
                                   atol=1e-12)


class TestElementwise:
    def test_relu(self):
        assert nc.relu([-1.0, 2.0]).value.tolist() == [0.0, 2.0]

    def test_mean_of_constant(self):
        np.testing.assert_allclose(nc.mean(np.full((3, 4), 2.5), axis=1).value, [2.5] * 3)

    def test_max_with_index(self):
        value, idx = nc.max_with_index([[0.1, 0.7, 0.2]], axis=1)
        assert value.value.tolist() == [0.7] and idx.tolist() == [1]

    def test_max_ties_go_to_lowest_index(self):
        _, idx = nc.max_with_index([[0.5, 0.5, 0.1]], axis=1)
        assert idx.tolist() == [0]

    def test_log_of_non_positive_is_a_domain_error(self):
        with pytest.raises(nc.DomainError):
            nc.log([1.0, 0.0])

    def test_only_scalar_or_equal_shape_broadcasting(self):
        assert nc.add(np.ones(3), 2.0).value.tolist() == [3.0] * 3
        with pytest.raises(nc.ShapeError):
            nc.add(np.ones((2, 3)), np.ones(3))

    def test_sigmoid_is_stable_at_extremes(self):
        out = nc.sigmoid([-800.0, 0.0, 800.0]).value
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0])

    def test_squared_l2(self):
        assert nc.sum_squares([3.0, 4.0]).item() == 25.0

    def test_concat_and_take_are_inverse(self):
        a, b = np.ones((2, 3)), np.zeros((2, 2))
        c = nc.concat([a, b], axis=1)
        np.testing.assert_array_equal(nc.take(c, 0, 3, axis=1).value, a)
        np.testing.assert_array_equal(nc.take(c, 3, 5, axis=1).value, b)


def _fd_check(build, *shapes, seed=0, tol=1e-6, positive=False):
    rng = np.random.default_rng(seed)
    params = []
    for i, shape in enumerate(shapes):
        v = away_from_zero(rng, shape)
        params.append(Parameter(np.abs(v) + 0.5 if positive else v, name=f"p{i}"))

    def f():
        # contract the output with a fixed random probe so every entry matters
        out = build(*params)
        probe = np.random.default_rng(99).normal(size=out.shape)
        return nc.sum(out * Tensor(probe))

    err = grad_check(f, params)
    assert err <= tol, err


class TestGradients:
    @pytest.mark.parametrize("name,build,shapes,positive", [
        ("add", lambda a, b: a + b, [(3, 4), (3, 4)], False),
        ("sub", lambda a, b: a - b, [(3, 4), (3, 4)], False),
        ("mul", lambda a, b: a * b, [(3, 4), (3, 4)], False),
        ("scale", lambda a: nc.scale(a, -2.5), [(5,)], False),
        ("matmul", lambda a, b: nc.matmul(a, b), [(3, 4), (4, 2)], False),
        ("linear", lambda x, w, b: nc.linear(x, w, b), [(5, 3), (3, 4), (4,)], False),
        ("grouped_linear", lambda x, w, b: nc.grouped_linear(x, w, b), [(2, 3, 4), (3, 4, 5), (3, 5)], False),
        ("transpose", lambda a: nc.transpose(a), [(3, 2)], False),
        ("reshape", lambda a: nc.reshape(a, (6,)), [(3, 2)], False),
        ("expand", lambda a: nc.expand(a, 1, 4), [(3, 2)], False),
        ("tanh", nc.tanh, [(4, 3)], False),
        ("relu", nc.relu, [(4, 3)], False),
        ("leaky_relu", nc.leaky_relu, [(4, 3)], False),
        ("sigmoid", nc.sigmoid, [(4, 3)], False),
        ("softplus", nc.softplus, [(4, 3)], False),
        ("exp", nc.exp, [(4, 3)], False),
        ("log", nc.log, [(4, 3)], True),
        ("sqrt", nc.sqrt, [(4, 3)], True),
        ("square", nc.square, [(4, 3)], False),
        ("sum_axis", lambda a: nc.sum(a, axis=0), [(4, 3)], False),
        ("mean_axis", lambda a: nc.mean(a, axis=1), [(4, 3)], False),
        ("sum_squares", lambda a: nc.sum_squares(a, axis=1), [(4, 3)], False),
        ("max", lambda a: nc.max_with_index(a, axis=1)[0], [(4, 3)], False),
        ("softmax", lambda a: nc.softmax(a, axis=1), [(4, 3)], False),
        ("log_softmax", lambda a: nc.log_softmax(a, axis=0), [(4, 3)], False),
        ("concat", lambda a, b: nc.concat([a, b], axis=1), [(2, 3), (2, 2)], False),
        ("take", lambda a: nc.take(a, 1, 3, axis=1), [(2, 4)], False),
        ("pick", lambda a: nc.pick(a, np.array([2, 0, 1])), [(3, 3)], False),
    ])
    def test_operator_matches_finite_differences(self, name, build, shapes, positive):
        _fd_check(build, *shapes, positive=positive)

    def test_square_of_x_at_three(self):
        x = Parameter(3.0)
        assert backward(x * x, [x])[0] == 6.0

    def test_constant_has_zero_gradient(self):
        x = Parameter(np.ones(3))
        (g,) = backward(nc.sum(Tensor(np.ones(3))), [x])
        np.testing.assert_array_equal(g, 0.0)

    def test_non_scalar_root_rejected(self):
        x = Parameter(np.ones(3))
        with pytest.raises(nc.ShapeError):
            backward(x * 2.0)

    def test_parameter_used_in_two_branches_accumulates(self):
        rng = np.random.default_rng(3)
        w = Parameter(rng.normal(size=(3, 3)))
        x = Tensor(rng.normal(size=(2, 3)))

        def f():
            return nc.sum(nc.tanh(nc.matmul(x, w))) + nc.sum_squares(nc.matmul(nc.matmul(x, w), w))

        assert grad_check(f, [w]) <= 1e-6

    def test_three_layer_composite(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(6, 5)))
        params = [Parameter(rng.normal(size=s) * 0.5) for s in [(5, 7), (7,), (7, 4), (4,), (4, 3), (3,)]]

        def f():
            h = nc.tanh(nc.linear(x, params[0], params[1]))
            h = nc.sigmoid(nc.linear(h, params[2], params[3]))
            return nc.mean(nc.log_softmax(nc.linear(h, params[4], params[5]), axis=1))

        assert grad_check(f, params) <= 1e-6

    def test_relu_subgradient_at_zero(self):
        x = Parameter(np.array([0.0, 1.0, -1.0]))
        (g,) = backward(nc.sum(nc.relu(x)), [x])
        assert g.tolist() == [0.0, 1.0, 0.0]

    def test_max_gradient_routes_to_argmax(self):
        x = Parameter(np.array([[0.1, 0.7, 0.2]]))
        (g,) = backward(nc.sum(nc.max_with_index(x, axis=1)[0]), [x])
        assert g.tolist() == [[0.0, 1.0, 0.0]]

    def test_no_grad_builds_no_graph(self):
        x = Parameter(np.ones(2))
        with nc.no_grad():
            y = x * 3.0
        assert not y.requires_grad


class TestGradCheck:
    def test_linear_function_is_exact(self):
        w = Parameter(np.random.default_rng(0).normal(size=(4, 2)))
        x = Tensor(np.random.default_rng(1).normal(size=(3, 4)))
        assert grad_check(lambda: nc.sum(nc.matmul(x, w)), [w]) <= 1e-10

    def test_softmax_cross_entropy_head(self):
        rng = np.random.default_rng(2)
        w, b = Parameter(rng.normal(size=(5, 4))), Parameter(rng.normal(size=4))
        x = Tensor(rng.normal(size=(8, 5)))
        y = rng.integers(0, 4, 8)
        assert grad_check(lambda: nc.neg(nc.mean(nc.pick(nc.log_softmax(nc.linear(x, w, b), axis=1), y))),
                          [w, b]) <= 1e-6

    def test_corrupted_gradient_is_detected(self):
        rng = np.random.default_rng(5)
        w = Parameter(rng.normal(size=(4, 3)) * 3)
        x = Tensor(rng.normal(size=(6, 4)) * 3)

        def f():
            return nc.sum(nc.square(nc.matmul(x, w)))

        analytic = backward(f(), [w])
        numeric = nc.numerical_gradient(f, [w])
        assert max_relative_error(analytic, numeric) <= 1e-6
        assert max_relative_error([analytic[0] * 1.01], numeric) > 1e-3


class TestAdam:
    def test_defaults(self):
        opt = Adam([Parameter(np.zeros(1))])
        assert (opt.lr, opt.beta1, opt.beta2) == (1e-4, 0.5, 0.999)

    def test_zero_gradient_leaves_parameters(self):
        p = Parameter(np.array([1.0, -2.0]))
        Adam([p]).step([np.zeros(2)])
        assert p.value.tolist() == [1.0, -2.0]

    @pytest.mark.parametrize("g", [3.0, -0.25])
    def test_first_step_moves_by_lr(self, g):
        p = Parameter(np.array([0.0]))
        Adam([p], lr=1e-2).step([np.array([g])])
        np.testing.assert_allclose(p.value, [-1e-2 * np.sign(g)], rtol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(nc.ShapeError):
            Adam([Parameter(np.zeros(2))]).step([np.zeros(3)])

    def test_identical_runs_are_bit_identical(self):
        def run():
            rng = Rng(7)
            p = Parameter(np.ones((3, 2)))
            opt = Adam([p])
            for _ in range(100):
                opt.step([rng.normal((3, 2))])
            return p.value

        assert run().tobytes() == run().tobytes()


class TestRng:
    def test_same_stream_same_draws(self):
        a = nc.gaussian(Rng(3, 5), (4, 4)).value
        b = nc.gaussian(Rng(3, 5), (4, 4)).value
        assert a.tobytes() == b.tobytes()

    def test_gaussian_moments(self):
        x = nc.gaussian(Rng(11), (100_000,)).value
        assert abs(x.mean()) < 0.02
        assert abs(x.var() - 1) < 0.02

    def test_streams_are_uncorrelated(self):
        root = Rng(12)
        a, b = root.child(1).normal(100_000), root.child(2).normal(100_000)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.02
