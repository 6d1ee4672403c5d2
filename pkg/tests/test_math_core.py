import numpy as np
import pytest

from fvlm.errors import ConfigError, ShapeError, TrainingError
from fvlm.math_core import (OptimizerState, add, affine, global_grad_norm,
                            hadamard, sgd_step, sigmoid, softmax,
                            softmax_columns, tanh)


class TestAffine:
    def test_identity(self):
        out = affine(np.eye(2), np.array([3.0, 4.0]), np.zeros(2))
        assert np.array_equal(out, [3.0, 4.0])

    def test_zero_weights_pass_bias(self):
        out = affine(np.zeros((2, 2)), np.array([9.0, -7.0]), np.array([1.0, 2.0]))
        assert np.array_equal(out, [1.0, 2.0])

    def test_hand_multiplication(self):
        w = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = affine(w, np.array([1.0, 1.0]), np.array([1.0, 1.0]))
        assert np.array_equal(out, [4.0, 8.0])

    def test_dimension_mismatch_names_operands(self):
        with pytest.raises(ShapeError, match="2x3.*dim 2"):
            affine(np.zeros((2, 3)), np.zeros(2), np.zeros(2))
        with pytest.raises(ShapeError, match="bias"):
            affine(np.zeros((2, 3)), np.zeros(3), np.zeros(5))

    def test_linearity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            w = rng.normal(size=(4, 6))
            x, y = rng.normal(size=6), rng.normal(size=6)
            a, b = rng.normal(), rng.normal()
            lhs = affine(w, a * x + b * y, np.zeros(4))
            rhs = a * affine(w, x, np.zeros(4)) + b * affine(w, y, np.zeros(4))
            assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-12)


class TestSoftmax:
    def test_symmetry(self):
        assert np.array_equal(softmax(np.zeros(4)), np.full(4, 0.25))

    def test_large_magnitude_no_overflow(self):
        assert np.array_equal(softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])

    def test_direct_evaluation(self):
        out = softmax(np.array([1.0, 2.0, 3.0]))
        assert np.allclose(out, [0.09003, 0.24473, 0.66524], atol=1e-5)

    def test_sums_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            p = softmax(rng.normal(scale=20, size=rng.integers(1, 40)))
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.all((p > 0) & (p <= 1))

    def test_shift_invariance_bit_identical(self):
        # Inputs on a dyadic grid so x + c is exact; max subtraction then
        # cancels the shift without any rounding at all.
        rng = np.random.default_rng(2)
        for _ in range(30):
            x = rng.integers(-8192, 8192, size=12) / 1024.0
            for c in (1.0, 64.0, 1024.0, -512.0):
                assert np.array_equal(softmax(x + c), softmax(x))

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            softmax(np.array([]))

    def test_columns_match_vector_softmax(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(7, 5))
        cols = softmax_columns(X)
        for t in range(5):
            assert np.allclose(cols[:, t], softmax(X[:, t]), rtol=1e-13)


class TestElementwise:
    def test_sigmoid_midpoint(self):
        assert sigmoid(np.zeros(3))[0] == 0.5

    def test_tanh_odd(self):
        assert tanh(np.zeros(2))[0] == 0.0

    def test_hadamard(self):
        assert np.array_equal(hadamard(np.array([2.0, 3.0]), np.array([4.0, 5.0])),
                              [8.0, 15.0])

    def test_add(self):
        assert np.array_equal(add(np.array([1.0, 2.0]), np.array([3.0, 4.0])),
                              [4.0, 6.0])

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            hadamard(np.zeros(2), np.zeros(3))
        with pytest.raises(ShapeError):
            add(np.zeros(2), np.zeros(3))

    def test_ranges(self):
        rng = np.random.default_rng(4)
        x = rng.normal(scale=50, size=1000)
        s, t = sigmoid(x), tanh(x)
        assert np.all((s >= 0) & (s <= 1))
        assert np.all((t >= -1) & (t <= 1))
        # interior strictly open for moderate inputs
        xm = rng.normal(scale=3, size=1000)
        assert np.all((sigmoid(xm) > 0) & (sigmoid(xm) < 1))
        assert np.all((tanh(xm) > -1) & (tanh(xm) < 1))


class TestSgd:
    def test_scalar_step(self):
        p = {"w": np.array([1.0])}
        sgd_step(p, {"w": np.array([1.0])}, OptimizerState(0.1, 10.0))
        assert np.allclose(p["w"], 0.9)

    def test_zero_grad_fixed_point(self):
        p = {"w": np.array([1.0, -2.0]), "b": np.array([[3.0, 4.0]])}
        before = {k: v.copy() for k, v in p.items()}
        sgd_step(p, {k: np.zeros_like(v) for k, v in p.items()}, OptimizerState(0.5))
        for k in p:
            assert np.array_equal(p[k], before[k])

    def test_global_norm_clip(self):
        p = {"a": np.array([0.0]), "b": np.array([0.0])}
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        sgd_step(p, g, OptimizerState(1.0, 2.5))
        # norm 5 scaled by 0.5 -> effective grads (1.5, 2.0)
        assert np.allclose(p["a"], -1.5)
        assert np.allclose(p["b"], -2.0)

    def test_identity_with_zero_lr_and_infinite_clip(self):
        rng = np.random.default_rng(5)
        p = {"w": rng.normal(size=(3, 3)) + 1.0}
        before = p["w"].copy()
        sgd_step(p, {"w": rng.normal(size=(3, 3))}, OptimizerState(0.0, np.inf))
        assert np.array_equal(p["w"], before)

    def test_nonfinite_grad_names_block(self):
        p = {"ok": np.zeros(2), "bad.block": np.zeros(2)}
        g = {"ok": np.zeros(2), "bad.block": np.array([1.0, np.nan])}
        with pytest.raises(TrainingError, match="bad.block"):
            sgd_step(p, g, OptimizerState(0.1))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, OptimizerState(0.1))
        with pytest.raises(ShapeError):
            sgd_step({"w": np.zeros(2)}, {"v": np.zeros(2)}, OptimizerState(0.1))

    def test_negative_lr_rejected(self):
        with pytest.raises(ConfigError):
            OptimizerState(-0.1)

    def test_global_norm(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        assert abs(global_grad_norm(g) - 5.0) < 1e-12


class TestKernelJacobians:
    """Analytic Jacobians of every kernel against central finite differences."""

    EPS = 1e-5

    def _fd_jacobian(self, fn, x):
        n = x.size
        out0 = fn(x)
        J = np.zeros((out0.size, n))
        for j in range(n):
            xp = x.copy()
            xp[j] += self.EPS
            xm = x.copy()
            xm[j] -= self.EPS
            J[:, j] = (fn(xp) - fn(xm)) / (2 * self.EPS)
        return J

    def test_sigmoid_jacobian(self):
        x = np.random.default_rng(6).normal(size=25)
        s = sigmoid(x)
        J = np.diag(s * (1 - s))
        assert np.max(np.abs(J - self._fd_jacobian(sigmoid, x))) < 1e-6

    def test_tanh_jacobian(self):
        x = np.random.default_rng(7).normal(size=25)
        J = np.diag(1 - np.tanh(x) ** 2)
        assert np.max(np.abs(J - self._fd_jacobian(tanh, x))) < 1e-6

    def test_softmax_jacobian(self):
        x = np.random.default_rng(8).normal(size=25)
        p = softmax(x)
        J = np.diag(p) - np.outer(p, p)
        assert np.max(np.abs(J - self._fd_jacobian(softmax, x))) < 1e-6

    def test_affine_jacobian_is_weight_matrix(self):
        rng = np.random.default_rng(9)
        w = rng.normal(size=(5, 5))
        b = rng.normal(size=5)
        x = rng.normal(size=5)
        J = self._fd_jacobian(lambda v: affine(w, v, b), x)
        assert np.max(np.abs(J - w)) < 1e-6
