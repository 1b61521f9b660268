import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invnets.invariance import sample_action
from invnets.networks import circular_shift
from invnets.targets import (
    LipschitzSurrogate,
    RadialTarget,
    ShellDensity,
    TargetError,
    centered_norm,
    default_interval_count,
    dump_kv,
    eval_radial,
    eval_surrogate,
    eval_translation_target,
    load_kv,
    make_intervals,
    sample_shell_uniform,
    sample_translation_shell,
    surrogate_gap_mc,
)


def at_radius(r, d=4):
    x = np.zeros(d)
    x[0] = r
    return x


class TestIntervals:
    def test_d4_n2(self):
        assert make_intervals(4, 1.0, 2) == [(2.0, 3.0), (3.0, 4.0)]

    def test_single(self):
        assert make_intervals(9, 2.0, 1) == [(6.0, 12.0)]

    def test_equal_widths(self):
        ivs = make_intervals(16, 1.0, 4)
        np.testing.assert_allclose([b - a for a, b in ivs], 1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 40), st.floats(0.1, 1.9), st.integers(1, 50))
    def test_partition_of_shell(self, d, C2, N):
        ivs = make_intervals(d, C2, N)
        r0 = C2 * math.sqrt(d)
        assert ivs[0][0] == pytest.approx(r0)
        assert ivs[-1][1] == pytest.approx(2 * r0)
        for (a, b), (c, _) in zip(ivs, ivs[1:]):
            assert b == pytest.approx(c)
        np.testing.assert_allclose([b - a for a, b in ivs], r0 / N)

    @pytest.mark.parametrize("args", [(4, 1.0, 0), (4, 0.0, 2), (4, 4.0, 2)])
    def test_preconditions(self, args):
        with pytest.raises(TargetError):
            make_intervals(*args)

    def test_default_count(self):
        assert default_interval_count(4, 1.0) == 64
        assert RadialTarget.build(4).N == 64


class TestRadial:
    g = RadialTarget(d=4, C2=1.0, N=2, betas=(1, -1))

    def test_examples(self):
        assert eval_radial(self.g, at_radius(2.5)) == 1.0
        assert eval_radial(self.g, at_radius(3.5)) == -1.0
        assert eval_radial(self.g, at_radius(5.0)) == 0.0

    def test_half_open(self):
        vals = eval_radial(self.g, np.stack([at_radius(r) for r in (2.0, 3.0, 4.0, 1.999)]))
        np.testing.assert_array_equal(vals, [1, -1, 0, 0])

    def test_dimension_check(self):
        with pytest.raises(TargetError):
            eval_radial(self.g, np.ones(3))

    def test_bad_betas(self):
        with pytest.raises(TargetError):
            RadialTarget(d=4, C2=1.0, N=2, betas=(1, 0))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_rotation_invariance_exact_on_interiors(self, seed):
        g = RadialTarget.build(4, 1.0, N=8, pattern="random", seed=seed)
        X = sample_shell_uniform(4, 1.0, 200, seed=seed)
        A = sample_action("rotation", 4, seed)
        r = np.linalg.norm(X, axis=1)
        # skip points within roundoff of an edge
        edges = np.array([a for a, _ in g.intervals] + [g.r_outer])
        keep = np.min(np.abs(r[:, None] - edges[None, :]), axis=1) > 1e-12
        np.testing.assert_array_equal(eval_radial(g, A(X))[keep], eval_radial(g, X)[keep])


class TestSurrogate:
    g = RadialTarget(d=4, C2=1.0, N=2, betas=(1, -1))

    def test_tent_midpoint_and_foot(self):
        h = LipschitzSurrogate(self.g)
        assert h.branch(2.5)[0] == 1.0
        # 1/N = 0.5 outside [2, 3)
        assert h.branch(1.5)[0] == 0.0
        assert h.branch(3.5)[0] == 0.0
        assert h.branch(1.75)[0] == pytest.approx(0.5)

    def test_paper_literal_max(self):
        h = LipschitzSurrogate(self.g, mode="paper_literal")
        # D_1 = 0.15 gives N D_1 = 0.3 inside the first interval
        assert h.branch(2.15)[0] == pytest.approx(1.0)
        # outside the interval the printed formula returns N D_i itself
        assert h.branch(1.9)[0] == pytest.approx(0.2)

    def test_indicator_mask(self):
        h = LipschitzSurrogate(self.g, B=(0, 1))
        assert eval_surrogate(h, at_radius(2.5)) == 0.0
        assert eval_surrogate(h, at_radius(3.5)) == -1.0

    def test_bad_mode(self):
        with pytest.raises(TargetError):
            LipschitzSurrogate(self.g, mode="smooth")

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 32), st.integers(0, 2**31))
    def test_lipschitz_and_range(self, N, seed):
        g = RadialTarget.build(4, 1.0, N=N, pattern="random", seed=seed)
        h = LipschitzSurrogate(g)
        rng = np.random.default_rng(seed)
        r1, r2 = rng.uniform(0, 6, 500), rng.uniform(0, 6, 500)
        h1, h2 = h.eval_radius(r1), h.eval_radius(r2)
        assert np.all(np.abs(h1 - h2) <= N * np.abs(r1 - r2) + 1e-9)
        assert np.all((h1 >= -1) & (h1 <= 1))

    def test_agrees_with_indicator_on_interiors(self):
        g = RadialTarget.build(4, 1.0, N=4)
        h = LipschitzSurrogate(g)
        mids = [(a + b) / 2 for a, b in g.intervals]
        np.testing.assert_array_equal(h.eval_radius(mids), g.eval_radius(mids))


class TestShell:
    def test_uniform_sampler_support(self):
        X = sample_shell_uniform(4, 1.0, 5000, seed=1)
        r = np.linalg.norm(X, axis=1)
        assert r.min() >= 2.0 - 1e-12 and r.max() <= 4.0 + 1e-12
        # P(r < 3) = (3^4 - 2^4) / (4^4 - 2^4) for volume-uniform radii
        p = (81 - 16) / (256 - 16)
        assert abs(np.mean(r < 3) - p) < 4 * math.sqrt(p * (1 - p) / 5000)

    @pytest.mark.parametrize("d", [2, 4])
    def test_density_normalized(self, d):
        # integrate phi^2 over a bounding box by plain Monte Carlo
        phi = ShellDensity(d, 1.0)
        rng = np.random.default_rng(0)
        L = 2 * math.sqrt(d)
        n = 400_000
        X = rng.uniform(-L, L, (n, d))
        vals = phi.density(X) * (2 * L) ** d
        assert abs(vals.mean() - 1.0) < 4 * vals.std() / math.sqrt(n)

    def test_density_sampler_in_shell(self):
        X = ShellDensity(9, 1.0).sample(2000, seed=3)
        r = np.linalg.norm(X, axis=1)
        assert r.min() >= 3.0 and r.max() <= 6.0


class TestGap:
    def test_bound_value(self):
        g = RadialTarget.build(4, 1.0, N=2)
        assert surrogate_gap_mc(g, LipschitzSurrogate(g), n_samples=1000)[2] == 1.5

    def test_zero_gap(self):
        g = RadialTarget.build(4, 1.0, N=1)
        # N = 1: the tent equals the indicator on the whole shell
        est, se, bound = surrogate_gap_mc(g, LipschitzSurrogate(g), n_samples=10_000)
        assert est == 0.0 and se == 0.0 and bound == 1.5

    def test_n64_within_bound(self):
        g = RadialTarget.build(4, 1.0, N=64)
        est, se, bound = surrogate_gap_mc(g, LipschitzSurrogate(g), n_samples=100_000, seed=0)
        assert est + 3 * se <= bound

    def test_seed_invariance(self):
        g = RadialTarget.build(4, 1.0, N=8)
        h = LipschitzSurrogate(g)
        a, sa, _ = surrogate_gap_mc(g, h, n_samples=50_000, seed=1)
        b, sb, _ = surrogate_gap_mc(g, h, n_samples=50_000, seed=2)
        assert abs(a - b) <= 3 * math.hypot(sa, sb)

    def test_needs_samples(self):
        g = RadialTarget.build(4, 1.0, N=2)
        with pytest.raises(TargetError):
            surrogate_gap_mc(g, LipschitzSurrogate(g), n_samples=999)


class TestTranslation:
    g = RadialTarget(d=4, C2=1.0, N=2, betas=(1, -1))

    def test_feature_examples(self):
        # centered norm of (a, -a, a, -a) is 2|a|
        assert eval_translation_target(self.g, np.array([1.25, -1.25, 1.25, -1.25]) + 7.0) == 1.0
        assert eval_translation_target(self.g, np.full(4, 3.0)) == 0.0

    def test_shift_and_offset_invariance(self):
        X = sample_translation_shell(4, 1.0, 300, seed=5, offset_scale=3.0)
        base = eval_translation_target(self.g, X)
        for k in range(4):
            np.testing.assert_array_equal(eval_translation_target(self.g, circular_shift(X, k)), base)
        np.testing.assert_allclose(centered_norm(X + 2.5), centered_norm(X), atol=1e-12)

    def test_sampler_feature_in_shell(self):
        X = sample_translation_shell(16, 1.0, 1000, seed=0)
        c = centered_norm(X)
        assert c.min() >= 4.0 - 1e-9 and c.max() <= 8.0 + 1e-9


def test_kv_round_trip():
    g = RadialTarget.build(9, 1.5, N=5, pattern="random", seed=7)
    text = dump_kv(g, mode="tent_corrected")
    back, mode = load_kv(text)
    assert back == g and mode == "tent_corrected"
    assert dump_kv(back, mode) == text


def test_kv_unknown_key():
    with pytest.raises(TargetError, match="line 2"):
        load_kv("d = 4\ncolour = red\n")
