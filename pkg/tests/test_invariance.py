import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invnets.invariance import (
    ActionError,
    GroupAction,
    PreconditionError,
    apply_action,
    check_l_finite,
    closure_bound_check,
    finite_difference,
    gaussian_sampler,
    invariance_defect,
    sample_action,
    sample_actions,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.integers(min_value=1, max_value=12)


class TestGroupAction:
    def test_translation_identity(self):
        a = GroupAction.translation(0.0, [0.0, 1.0, 0.0])
        x = np.array([3.0, -1.0, 2.0])
        np.testing.assert_array_equal(a(x), x)

    def test_swap(self):
        # the one-based permutation (2,1)
        np.testing.assert_array_equal(GroupAction.permutation([1, 0])([3.0, 5.0]), [5.0, 3.0])

    def test_translation_example(self):
        np.testing.assert_allclose(GroupAction.translation(0.5, [1.0, 0.0])([1.0, 2.0]), [1.5, 2.0])

    def test_invalid_actions(self):
        with pytest.raises(ActionError):
            GroupAction.permutation([0, 0, 1])
        with pytest.raises(ActionError):
            GroupAction.rotation(np.diag([1.0, -1.0]))  # orthogonal, det -1
        with pytest.raises(ActionError):
            GroupAction.rotation(np.array([[1.0, 0.1], [0.0, 1.0]]))
        with pytest.raises(ActionError):
            GroupAction.translation(1.0, [1.0, 1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ActionError):
            apply_action(GroupAction.permutation([1, 0]), np.ones(3))

    def test_batched(self):
        a = sample_action("rotation", 3, 5)
        X = np.random.default_rng(0).standard_normal((10, 3))
        np.testing.assert_allclose(apply_action(a, X), np.array([a.matrix @ x for x in X]), atol=1e-14)


class TestSampling:
    def test_rotation_in_so3(self):
        A = sample_action("rotation", 3, 11).matrix
        assert np.max(np.abs(A.T @ A - np.eye(3))) <= 1e-10
        assert abs(np.linalg.det(A) - 1.0) <= 1e-8

    def test_permutation_bijection(self):
        p = sample_action("permutation", 4, 2).perm
        assert sorted(p) == [0, 1, 2, 3]

    @pytest.mark.parametrize("kind", ["permutation", "rotation", "translation"])
    def test_determinism(self, kind):
        a, b = sample_action(kind, 5, 42), sample_action(kind, 5, 42)
        x = np.arange(5.0)
        np.testing.assert_array_equal(a(x), b(x))

    def test_dim_zero(self):
        with pytest.raises(ActionError):
            sample_action("rotation", 0, 0)

    def test_haar_first_column_mean(self):
        # E[A e1] = 0 under Haar measure; a biased sign fix would bias this
        cols = np.array([sample_action("rotation", 3, s).matrix[:, 0] for s in range(2000)])
        assert np.max(np.abs(cols.mean(axis=0))) < 4 * math.sqrt(1 / 3 / 2000)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["permutation", "rotation", "translation"]), dims, seeds)
def test_inverse_round_trip(kind, dim, seed):
    a = sample_action(kind, dim, seed)
    x = np.random.default_rng(seed).standard_normal((4, dim)) * 3
    np.testing.assert_allclose(a.inverse()(a(x)), x, atol=1e-10)
    np.testing.assert_allclose(a(a.inverse()(x)), x, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(dims, seeds, seeds)
def test_permutation_closure(dim, s1, s2):
    a, b = sample_action("permutation", dim, s1), sample_action("permutation", dim, s2)
    ab = a.compose(b)
    assert sorted(ab.perm) == list(range(dim))
    x = np.random.default_rng(s1).standard_normal(dim)
    np.testing.assert_array_equal(ab(x), a(b(x)))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["rotation", "translation"]), st.integers(2, 8), seeds, seeds)
def test_composition_matches_sequential(kind, dim, s1, s2):
    a, b = sample_action(kind, dim, s1), sample_action(kind, dim, s2)
    x = np.random.default_rng(s2).standard_normal(dim)
    np.testing.assert_allclose(a.compose(b)(x), a(b(x)), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10), seeds)
def test_rotations_preserve_norm(dim, seed):
    a = sample_action("rotation", dim, seed)
    X = np.random.default_rng(seed).standard_normal((20, dim))
    np.testing.assert_allclose(np.linalg.norm(a(X), axis=1), np.linalg.norm(X, axis=1), atol=1e-10)


class TestInvarianceDefect:
    def test_norm_under_rotations(self):
        acts = sample_actions("rotation", 5, 10, seed=1)
        rep = invariance_defect(lambda X: np.sum(X**2, axis=1), acts, gaussian_sampler(5), 1000)
        assert rep.sup_defect <= 1e-9
        assert 0 <= rep.l2_defect <= rep.sup_defect

    def test_constant(self):
        acts = sample_actions("translation", 3, 4, seed=2)
        rep = invariance_defect(lambda X: np.full(len(X), 7.0), acts, gaussian_sampler(3), 50)
        assert rep.sup_defect == 0.0 and rep.l2_defect == 0.0

    def test_swap_l2_oracle(self):
        # f = x1 under the swap: E[(x1 - x2)^2] = 2
        swap = GroupAction.permutation([1, 0])
        rep = invariance_defect(lambda X: X[:, 0], [swap], gaussian_sampler(2), 100_000, seed=4)
        assert abs(rep.l2_defect - math.sqrt(2)) <= 3 * rep.l2_std_error
        assert rep.l2_std_error > 0

    def test_scalar_function_supported(self):
        swap = GroupAction.permutation([1, 0])
        rep = invariance_defect(lambda x: float(x[0] + x[1]), [swap], gaussian_sampler(2), 20)
        assert rep.sup_defect <= 1e-15

    def test_non_finite_names_sample(self):
        def f(X):
            out = np.zeros(len(X))
            out[3] = np.nan
            return out

        with pytest.raises(ValueError, match="sample 3"):
            invariance_defect(f, [GroupAction.permutation([1, 0])], gaussian_sampler(2), 10)

    def test_requires_samples(self):
        with pytest.raises(ValueError):
            invariance_defect(lambda X: X[:, 0], [GroupAction.permutation([0])], gaussian_sampler(1), 0)


class TestClosureBound:
    acts = sample_actions("rotation", 4, 10, seed=0)
    sampler = staticmethod(gaussian_sampler(4))

    def test_identity_case(self):
        g = lambda X: np.sum(X**2, axis=1)
        res = closure_bound_check(g, g, 0.0, self.acts, self.sampler, 500)
        assert res and res.invariance_gap <= 1e-9

    @pytest.mark.parametrize("eps", [0.1, 0.01])
    def test_perturbed_norm(self, eps):
        g = lambda X: np.sum(X**2, axis=1)
        f = lambda X: g(X) + eps * np.sin(X[:, 0])
        res = closure_bound_check(f, g, eps, self.acts, self.sampler, 1000)
        assert res.passed
        assert res.invariance_gap <= 2 * eps + 1e-6
        assert res.invariance_gap > 0

    def test_far_from_invariant_is_precondition_error(self):
        g = lambda X: np.sum(X**2, axis=1)
        with pytest.raises(PreconditionError, match="exceeds eps"):
            closure_bound_check(lambda X: X[:, 0], g, 0.01, self.acts, self.sampler, 200)

    def test_non_invariant_g_is_precondition_error(self):
        with pytest.raises(PreconditionError, match="not invariant"):
            closure_bound_check(lambda X: X[:, 0], lambda X: X[:, 0], 0.1, self.acts, self.sampler, 200)


class TestLFinite:
    def test_sigmoid(self):
        ok, integral = check_l_finite(lambda x: 1 / (1 + np.exp(-x)), 1)
        assert ok
        assert integral == pytest.approx(1.0, abs=1e-6)

    def test_identity_fails_tail(self):
        ok, integral = check_l_finite(lambda x: x, 1)
        assert not ok
        assert integral == pytest.approx(40.0)

    def test_gaussian_zero_integral(self):
        ok, integral = check_l_finite(lambda x: np.exp(-(x**2)), 1)
        assert not ok
        assert abs(integral) <= 1e-9

    def test_tanh_second_order(self):
        # D^1 tanh integrates to 2; D^2 tanh is odd and integrates to 0
        assert check_l_finite(np.tanh, 1)[0]
        assert not check_l_finite(np.tanh, 2)[0]

    def test_relu_second_difference(self):
        # D^2 relu is a point mass of weight 1
        ok, integral = check_l_finite(lambda x: np.maximum(x, 0.0), 2)
        assert ok and integral == pytest.approx(1.0, abs=1e-6)

    def test_finite_difference_polynomial(self):
        x = np.linspace(-2, 2, 9)
        np.testing.assert_allclose(finite_difference(lambda t: t**3, x, 3, 1e-2), 6.0, atol=1e-6)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            check_l_finite(np.tanh, 0)
        with pytest.raises(ValueError):
            check_l_finite(np.tanh, 1, half_range=0)
        with pytest.raises(ValueError):
            check_l_finite(lambda x: np.exp(10 * x**2), 1)
