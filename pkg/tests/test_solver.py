import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from shelab.grid_noise import Grid, NoiseField, sample_noise
from shelab.heat_kernel import increment_variance_quadrature, kernel_convolve
from shelab.holder_tools import spatial_seminorm
from shelab.solver import (
    DriftSpec,
    NumericalFailure,
    SigmaSpec,
    fd_variance_exact,
    noise_term,
    sigma_preset,
    solve_fd,
    solve_fd_batch,
    solve_spectral_constant,
    spectral_rows_batch,
    u0_preset,
)


def zero_noise(grid):
    return NoiseField(increments=np.zeros((grid.n_t, grid.n_x)), grid=grid)


class TestSigmaSpec:
    def test_presets_validate(self):
        for name, params in [("const", {}), ("tx_cos", {"base": 1.0, "amp": 0.3}),
                             ("sin_u", {"base": 1.0, "amp": 0.4})]:
            sigma_preset(name, **params).validate_on_lattice(n=10_000)

    def test_ellipticity_violation_detected(self):
        bad = SigmaSpec("tx_dependent", lambda t, x, u: 0.5 + 0.0 * x + 0.0 * u, 0.8, 1.2)
        with pytest.raises(ValueError):
            bad.validate_on_lattice()

    def test_lipschitz_violation_detected(self):
        bad = SigmaSpec("u_dependent", lambda t, x, u: 1.0 + 0.5 * np.sin(2 * u), 0.5, 1.5, lip=0.1)
        with pytest.raises(ValueError):
            bad.validate_on_lattice()

    def test_constant_requires_zero_lip(self):
        with pytest.raises(ValueError):
            SigmaSpec("constant", lambda t, x, u: 1.0, 1.0, 1.0, lip=0.5)

    def test_drift_bound_checked(self):
        good = DriftSpec(lambda t, x: 0.3 * np.sin(2 * math.pi * x), 0.3)
        good.validate_on_lattice()
        bad = DriftSpec(lambda t, x: 2.0 + 0.0 * x, 1.0)
        with pytest.raises(ValueError):
            bad.validate_on_lattice()


class TestSolveFD:
    def test_deterministic_eigenmode_decay(self):
        g = Grid(256, 64, 0.05)
        u0 = np.cos(2 * math.pi * g.xs())
        path = solve_fd(g, sigma_preset("const"), u0, zero_noise(g))
        m1 = 1.0 / (1.0 + 2.0 * (g.dt / g.dx**2) * math.sin(math.pi / g.n_x) ** 2)
        # matches the scheme's exact symbol to roundoff
        assert np.max(np.abs(path.values[-1] - m1**g.n_t * u0)) < 1e-12
        # and the continuum factor to O(dt + dx^2)
        cont = math.exp(-2 * math.pi**2 * 0.05)
        assert np.max(np.abs(path.values[-1] - cont * u0)) < 50 * (g.dt + g.dx**2)

    def test_mean_preserved_without_drift(self):
        g = Grid(64, 32, 0.02)
        rng = np.random.default_rng(0)
        u0 = rng.standard_normal(64)
        path = solve_fd(g, sigma_preset("const"), u0, zero_noise(g))
        for i in (1, 16, 32):
            assert path.values[i].mean() == pytest.approx(u0.mean(), abs=1e-13)

    def test_deterministic_given_noise(self):
        g = Grid(64, 32, 0.02)
        nz = sample_noise(g, 4, 99)
        u0 = np.zeros(64)
        a = solve_fd(g, sigma_preset("const"), u0, nz)
        b = solve_fd(g, sigma_preset("const"), u0, nz)
        assert np.array_equal(a.values, b.values)

    def test_variance_matches_exact_symbol_formula(self):
        g = Grid(128, 64, 0.01)
        cfgN = 3000
        noise = np.empty((cfgN, g.n_t, g.n_x))
        scale = math.sqrt(g.dt * g.dx)
        for s in range(cfgN):
            rng = np.random.default_rng(np.random.SeedSequence([5, s]))
            noise[s] = rng.standard_normal((g.n_t, g.n_x)) * scale
        vals = solve_fd_batch(g, sigma_preset("const"), np.zeros(g.n_x), noise)
        var = vals[:, -1, :].var(axis=0).mean()
        target = fd_variance_exact(g, 1.0, g.n_t)
        se = target * math.sqrt(2.0 / (cfgN * 4))  # columns correlated; be conservative
        assert abs(var - target) < 5 * se

    def test_numerical_failure_carries_step(self):
        g = Grid(32, 16, 0.01)
        huge = NoiseField(increments=np.full((16, 32), 1e200), grid=g)
        with pytest.raises(NumericalFailure) as exc:
            solve_fd(g, sigma_preset("const"), np.zeros(32), huge)
        assert exc.value.step >= 1

    def test_drift_enters_linearly(self):
        g = Grid(64, 32, 0.02)
        drift = DriftSpec(lambda t, x: np.cos(2 * math.pi * x), 1.0)
        base = solve_fd(g, sigma_preset("const"), np.zeros(64), zero_noise(g))
        forced = solve_fd(g, sigma_preset("const"), np.zeros(64), zero_noise(g), drift)
        assert np.max(np.abs(base.values)) == 0.0
        assert np.max(np.abs(forced.values[-1])) > 0.0


class TestSpectral:
    def test_translation_invariant_variance(self):
        g = Grid(64, 16, 0.01)
        rows = spectral_rows_batch(g, 1.0, np.zeros(64), 7, np.arange(4000),
                                   row_indices=np.array([0, g.n_t]))
        var = rows[:, 1, :].var(axis=0)
        spread = var.max() - var.min()
        assert spread < 6 * var.mean() * math.sqrt(2.0 / 4000)

    def test_marginal_variance_matches_quadrature(self):
        g = Grid(256, 16, 0.01)
        n = 10_000
        rows = spectral_rows_batch(g, 1.0, np.zeros(256), 11, np.arange(n),
                                   row_indices=np.array([0, g.n_t]))
        var = rows[:, 1, :].var(axis=0).mean()
        q = increment_variance_quadrature("time_window", (0.0, g.T))
        se = q * math.sqrt(2.0 / (n * 8))
        assert abs(var - q) < 5 * se

    def test_covariance_matches_semigroup_quadrature(self):
        g = Grid(128, 16, 0.02)
        n = 8000
        rows = spectral_rows_batch(g, 1.0, np.zeros(128), 13, np.arange(n),
                                   row_indices=np.array([0, g.n_t]))[:, 1, :]
        from scipy.integrate import quad
        from shelab.heat_kernel import torus_kernel

        for gap_cells in (4, 16, 64):
            c_emp = np.mean([
                np.cov(rows[:, j], rows[:, (j + gap_cells) % 128])[0, 1]
                for j in range(0, 128, 16)
            ])
            d = gap_cells * g.dx
            c_quad, _ = quad(lambda r: 2 * r * torus_kernel(2 * r * r, d), 0, math.sqrt(g.T),
                             limit=200, epsabs=1e-12)
            se = 0.06 / math.sqrt(n)  # conservative scale for averaged covariances
            assert abs(c_emp - c_quad) < 5 * se

    def test_fd_and_spectral_agree_in_law(self):
        # two-sample KS below the 1% critical value at the marginal (t, x)
        g = Grid(128, 160, 0.01)
        n = 10_000
        spec_rows = spectral_rows_batch(g, 1.0, np.zeros(128), 17, np.arange(n),
                                        row_indices=np.array([0, g.n_t]))[:, 1, 64]
        noise = np.empty((n, g.n_t, g.n_x))
        scale = math.sqrt(g.dt * g.dx)
        for s in range(n):
            rng = np.random.default_rng(np.random.SeedSequence([19, s]))
            noise[s] = rng.standard_normal((g.n_t, g.n_x)) * scale
        fd_vals = solve_fd_batch(g, sigma_preset("const"), np.zeros(128), noise)[:, -1, 64]
        stat = ks_2samp(spec_rows, fd_vals).statistic
        crit_1pct = 1.628 * math.sqrt(2.0 / n)
        # the FD marginal carries an O(dx) variance deficit; allow it on top
        assert stat < crit_1pct + 0.01

    def test_initial_profile_reproduced(self):
        g = Grid(64, 16, 0.01)
        u0 = u0_preset("cos", g, amp=0.5)
        p = solve_spectral_constant(g, 1.0, u0, 3)
        assert np.max(np.abs(p.values[0] - u0)) < 1e-12


class TestNoiseTerm:
    def test_zero_initial_profile_identity(self):
        g = Grid(64, 32, 0.02)
        p = solve_spectral_constant(g, 1.0, np.zeros(64), 5)
        row = noise_term(p, np.zeros(64), 20)
        assert np.array_equal(row, p.values[20])

    def test_centered_and_variance(self):
        g = Grid(64, 16, 0.01)
        u0 = u0_preset("cos", g, amp=0.3)
        n = 6000
        rows = spectral_rows_batch(g, 1.0, u0, 23, np.arange(n),
                                   row_indices=np.array([0, g.n_t]))[:, 1, :]
        flow = kernel_convolve(u0, g.T)
        nterm = rows - flow[None, :]
        mean_se = nterm.std(axis=0).mean() / math.sqrt(n)
        assert np.max(np.abs(nterm.mean(axis=0))) < 5 * mean_se
        q = increment_variance_quadrature("time_window", (0.0, g.T))
        var = nterm.var(axis=0).mean()
        # spectral flow vs cell-mass convolve differ at O(dx^2); fold into band
        assert abs(var - q) < 5 * q * math.sqrt(2.0 / (n * 8)) + 1e-4

    def test_index_checked(self):
        g = Grid(64, 16, 0.01)
        p = solve_spectral_constant(g, 1.0, np.zeros(64), 5)
        with pytest.raises(ValueError):
            noise_term(p, np.zeros(64), 17)


class TestEllipticityPropagation:
    def test_variance_band_for_tx_sigma(self):
        g = Grid(128, 96, 0.01)
        sig = sigma_preset("tx_cos", base=1.0, amp=0.2)
        n = 2000
        noise = np.empty((n, g.n_t, g.n_x))
        scale = math.sqrt(g.dt * g.dx)
        for s in range(n):
            rng = np.random.default_rng(np.random.SeedSequence([29, s]))
            noise[s] = rng.standard_normal((g.n_t, g.n_x)) * scale
        vals = solve_fd_batch(g, sig, np.zeros(g.n_x), noise)
        var = vals[:, -1, :].var(axis=0).mean()
        q = increment_variance_quadrature("time_window", (0.0, g.T))
        # generous MC + discretization margin inside the ellipticity band
        assert sig.c1**2 * q * 0.85 <= var <= sig.c2**2 * q * 1.1


class TestReduction:
    def test_reduced_path_matches_shifted_sigma_solve(self):
        # v = u - G_t*u0 with sigma~(t,x,v) = sigma(t,x, v + (G_t*u0)(x))
        g = Grid(64, 48, 0.02)
        u0 = u0_preset("cos", g, amp=0.8)
        flows = {i: kernel_convolve(u0, i * g.dt) for i in range(g.n_t + 1)}
        sig = sigma_preset("sin_u", base=1.0, amp=0.4)

        def shifted(t, x, v):
            i = int(round(t / g.dt))
            return sig(t, x, v + flows[i])

        sig_shift = SigmaSpec("u_dependent", shifted, sig.c1, sig.c2, sig.lip)
        n = 1500
        a_final = np.empty(n)
        b_final = np.empty(n)
        for s in range(n):
            nz = sample_noise(g, s, 31)
            u_path = solve_fd(g, sig, u0, nz)
            a_final[s] = u_path.values[-1, 10] - flows[g.n_t][10]
            v_path = solve_fd(g, sig_shift, np.zeros(64), nz)
            b_final[s] = v_path.values[-1, 10]
        stat = ks_2samp(a_final, b_final).statistic
        crit_1pct = 1.628 * math.sqrt(2.0 / n)
        assert stat < crit_1pct
