import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shelab.grid_noise import Grid
from shelab.holder_tools import (
    HolderFunction,
    batch_spatial_sup_within,
    batch_temporal_sup_within,
    combined_seminorm,
    default_stride,
    mollify,
    normalized_increments,
    seminorm_diff,
    spatial_seminorm,
    temporal_seminorm,
)


def brute_spatial(row, theta, metric="representative"):
    n = len(row)
    dx = 1.0 / n
    q = 0.5 - theta
    best = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            sep = j - i
            if metric == "torus":
                sep = min(sep, n - sep)
            r = abs(row[j] - row[i]) / (sep * dx) ** q
            best = max(best, r)
    return best


def brute_temporal(col, theta, T, stride=1):
    n = len(col)
    dt = T / (n - 1)
    qt = 0.25 - theta / 2.0
    idx = list(range(0, n, stride))
    best = 0.0
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            i, j = idx[a], idx[b]
            best = max(best, abs(col[j] - col[i]) / ((j - i) * dt) ** qt)
    return best


def brute_combined(values, theta, T):
    n_t1, n_x = values.shape
    dx = 1.0 / n_x
    dt = T / (n_t1 - 1)
    q = 0.5 - theta
    qt = 0.25 - theta / 2.0
    best = 0.0
    flat = [(i, j) for i in range(n_t1) for j in range(n_x)]
    for a in range(len(flat)):
        for b in range(a + 1, len(flat)):
            (i1, j1), (i2, j2) = flat[a], flat[b]
            dxv = (abs(j1 - j2) * dx) ** q if j1 != j2 else 0.0
            dtv = (abs(i1 - i2) * dt) ** qt if i1 != i2 else 0.0
            best = max(best, abs(values[i1, j1] - values[i2, j2]) / (dxv + dtv))
    return best


class TestSpatialSeminorm:
    def test_constant_row_is_zero(self):
        assert spatial_seminorm(np.full(16, 3.7), 0.25).value == 0.0

    def test_two_point_pair(self):
        row = np.zeros(2)
        row[1] = 1.0  # points 0 and 0.5
        r = spatial_seminorm(row, 0.25)
        assert r.value == pytest.approx(2.0 ** 0.25, rel=1e-15)
        assert r.arg_pair == (0, 1)

    @pytest.mark.parametrize("metric", ["representative", "torus"])
    @pytest.mark.parametrize("theta", [0.1, 0.25, 0.5])
    def test_equals_bruteforce_exactly(self, metric, theta):
        rng = np.random.default_rng(42)
        for _ in range(5):
            row = rng.standard_normal(64)
            assert spatial_seminorm(row, theta, metric).value == brute_spatial(row, theta, metric)

    def test_metric_ordering(self):
        # torus distances are never larger, so torus ratios are never smaller
        rng = np.random.default_rng(1)
        row = rng.standard_normal(32)
        assert spatial_seminorm(row, 0.3, "torus").value >= spatial_seminorm(row, 0.3).value

    def test_rejects_short_input(self):
        with pytest.raises(ValueError):
            spatial_seminorm(np.array([1.0]), 0.25)

    @given(st.floats(min_value=-100, max_value=100), st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_shift_invariance_and_scaling(self, c, seed):
        rng = np.random.default_rng(seed)
        row = rng.standard_normal(24)
        base = spatial_seminorm(row, 0.25).value
        shifted = spatial_seminorm(row + c, 0.25).value
        assert shifted == pytest.approx(base, rel=1e-9, abs=1e-9)
        scaled = spatial_seminorm(3.0 * row, 0.25).value
        assert scaled == pytest.approx(3.0 * base, rel=1e-12)


class TestTemporalSeminorm:
    def test_constant_column_is_zero(self):
        assert temporal_seminorm(np.full(9, -1.0), 0.25, 1.0).value == 0.0

    def test_endpoint_pair(self):
        # two-point series f(0) = 0, f(T) = 1 with T = 1: ratio 1 / 1**(1/8)
        r = temporal_seminorm(np.array([0.0, 1.0]), 0.25, 1.0)
        assert r.value == pytest.approx(1.0, rel=1e-15)
        assert r.arg_pair == (0, 1)

    @pytest.mark.parametrize("stride", [1, 2, 4])
    def test_equals_bruteforce_exactly(self, stride):
        rng = np.random.default_rng(7)
        col = rng.standard_normal(33)
        got = temporal_seminorm(col, 0.2, 0.5, stride).value
        assert got == brute_temporal(col, 0.2, 0.5, stride)

    def test_stride_is_lower_bound(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            col = rng.standard_normal(65)
            full = temporal_seminorm(col, 0.25, 1.0, 1).value
            assert temporal_seminorm(col, 0.25, 1.0, 4).value <= full

    def test_default_stride_policy(self):
        assert default_stride(1024) == 1
        assert default_stride(1025) == 4


class TestCombinedSeminorm:
    def test_constant_path_is_zero(self):
        assert combined_seminorm(np.full((5, 8), 2.0), 0.25, T=1.0).value == 0.0

    def test_identity_vs_full_bruteforce(self):
        rng = np.random.default_rng(42)
        for k in range(20):
            values = rng.standard_normal((8, 8))
            got = combined_seminorm(values, 0.25, T=0.3).value
            assert got == brute_combined(values, 0.25, 0.3)

    def test_shift_invariance(self):
        rng = np.random.default_rng(9)
        v = rng.standard_normal((6, 8))
        a = combined_seminorm(v, 0.3, T=1.0).value
        b = combined_seminorm(v + 11.5, 0.3, T=1.0).value
        assert b == pytest.approx(a, rel=1e-12)

    def test_equals_max_of_axis_sups(self):
        rng = np.random.default_rng(10)
        v = rng.standard_normal((7, 16))
        sp = max(spatial_seminorm(v[i], 0.25).value for i in range(7))
        tm = max(temporal_seminorm(v[:, j], 0.25, 0.7).value for j in range(16))
        assert combined_seminorm(v, 0.25, T=0.7).value == max(sp, tm)


class TestNormalizedIncrements:
    def test_spatial_max_equals_seminorm(self):
        rng = np.random.default_rng(2)
        v = rng.standard_normal((4, 16))
        field = normalized_increments(v, 0.25, "spatial")
        assert field.shape == (4, 16, 16)
        top = max(spatial_seminorm(v[i], 0.25).value for i in range(4))
        assert field.max() == top

    def test_temporal_max_equals_seminorm(self):
        rng = np.random.default_rng(3)
        v = rng.standard_normal((9, 6))
        field = normalized_increments(v, 0.25, "temporal", T=0.5)
        assert field.shape == (6, 9, 9)
        top = max(temporal_seminorm(v[:, j], 0.25, 0.5).value for j in range(6))
        assert field.max() == pytest.approx(top, rel=1e-15)

    def test_constant_path_all_zero(self):
        v = np.full((4, 8), 5.0)
        assert np.all(normalized_increments(v, 0.25, "spatial") == 0.0)


def _grid(n_x=64, n_t=64, T=1.0):
    return Grid(n_x, n_t, T)


class TestMollify:
    def test_constant_fixed_point(self):
        g = _grid()
        f = HolderFunction(values=np.full((g.n_t + 1, g.n_x), 4.0), gamma=0.5,
                           beta=0.5, norm_bound=4.0, grid=g)
        for n in (1, 4, 16):
            out = mollify(f, n)
            assert np.max(np.abs(out - 4.0)) < 1e-13

    def test_sup_error_decay_slope(self):
        gamma = beta = 0.5
        g = Grid(512, 512, 1.0)
        f = HolderFunction.from_callable(
            lambda t, x: np.abs(np.sin(math.pi * x)) ** beta * (1.0 + t**gamma),
            g, gamma, beta,
        )
        ns = [4, 8, 16, 32]
        errs = [float(np.max(np.abs(mollify(f, n) - f.values))) for n in ns]
        slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
        assert slope <= -min(gamma, beta) + 0.1

    def test_derivative_growth(self):
        gamma, beta = 0.5, 0.1
        g = Grid(1024, 64, 1.0)
        f = HolderFunction.from_callable(
            lambda t, x: np.abs(np.sin(math.pi * x)) ** beta * (1.0 + t**gamma),
            g, gamma, beta,
        )
        ns = [4, 8, 16, 32]
        d1, d2 = [], []
        for n in ns:
            fn = mollify(f, n)
            g1 = np.gradient(fn, g.dx, axis=1)
            d1.append(np.max(np.abs(g1)))
            d2.append(np.max(np.abs(np.gradient(g1, g.dx, axis=1))))
        c1 = d1[0] / ns[0]
        c2 = d2[0] / ns[0] ** 2
        for n, v1, v2 in zip(ns, d1, d2):
            assert v1 <= 1.5 * c1 * n
            assert v2 <= 1.5 * c2 * n**2

    def test_seminorm_of_difference_falls(self):
        # mollification converges in the weaker Holder scale
        gamma = beta = 0.6
        beta1 = 0.4
        g = Grid(256, 128, 1.0)
        f = HolderFunction.from_callable(
            lambda t, x: np.abs(np.sin(math.pi * x)) ** beta * (1.0 + t**gamma),
            g, gamma, beta,
        )
        theta = 0.5 - beta1
        sem = []
        for n in (2, 8, 32):
            diff = mollify(f, n) - f.values
            sem.append(max(spatial_seminorm(diff[i], theta).value for i in range(0, g.n_t + 1, 16)))
        # decays like n**-(beta - beta1) = n**-0.2, so 16x in n gives ~0.57x
        assert sem[0] > sem[1] > sem[2]
        assert sem[2] <= 0.7 * sem[0]


class TestHolderFunction:
    def test_declared_bound_holds(self):
        g = _grid(64, 64)
        f = HolderFunction.from_callable(
            lambda t, x: np.sin(2 * math.pi * x) * (1 + t), g, 1.0, 1.0
        )
        assert f.check_declared_bound()

    def test_bad_exponents_rejected(self):
        g = _grid(16, 16)
        with pytest.raises(ValueError):
            HolderFunction(values=np.zeros((17, 16)), gamma=0.0, beta=0.5,
                           norm_bound=1.0, grid=g)


class TestSeminormDiff:
    def _setup(self):
        g = _grid(16, 16, 0.5)
        rng = np.random.default_rng(4)
        h = HolderFunction(values=rng.standard_normal((17, 16)), gamma=0.5, beta=0.5,
                           norm_bound=100.0, grid=g)
        u = rng.standard_normal((17, 16))
        return g, u, h

    def test_identical_inputs_zero(self):
        g, u, h = self._setup()
        assert seminorm_diff(h.values, h, 0.25, "combined").value == 0.0

    def test_zero_reference_is_plain(self):
        g, u, h = self._setup()
        zero = HolderFunction(values=np.zeros_like(u), gamma=0.5, beta=0.5,
                              norm_bound=0.0, grid=g)
        got = seminorm_diff(u, zero, 0.25, "combined").value
        assert got == combined_seminorm(u, 0.25, T=g.T).value

    def test_triangle_bound(self):
        g, u, h = self._setup()
        for kind in ("spatial_sup", "temporal_sup", "combined"):
            d = seminorm_diff(u, h, 0.25, kind).value
            zero = HolderFunction(values=np.zeros_like(u), gamma=0.5, beta=0.5,
                                  norm_bound=0.0, grid=g)
            su = seminorm_diff(u, zero, 0.25, kind).value
            sh = seminorm_diff(h.values, zero, 0.25, kind).value
            assert d <= su + sh + 1e-12

    def test_grid_mismatch_rejected(self):
        g, u, h = self._setup()
        with pytest.raises(ValueError):
            seminorm_diff(u[:, :8], h, 0.25, "combined")


class TestBatchCaps:
    def test_matches_exact_spatial(self):
        rng = np.random.default_rng(6)
        batch = rng.standard_normal((40, 5, 16)) * 0.3
        eps, theta = 0.9, 0.25
        mask = batch_spatial_sup_within(batch, eps, theta)
        for s in range(40):
            exact = max(spatial_seminorm(batch[s, i], theta).value for i in range(5))
            assert mask[s] == (exact <= eps)

    def test_matches_exact_temporal(self):
        rng = np.random.default_rng(7)
        batch = rng.standard_normal((40, 9, 4)) * 0.3
        eps, theta, T = 1.1, 0.25, 0.5
        mask = batch_temporal_sup_within(batch, eps, theta, T)
        for s in range(40):
            exact = max(temporal_seminorm(batch[s, :, j], theta, T).value for j in range(4))
            assert mask[s] == (exact <= eps)
