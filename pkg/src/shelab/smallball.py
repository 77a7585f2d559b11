"""Small-ball event families and their Monte Carlo estimators.

Three estimators are provided:

* ``estimate_plain``: direct frequency estimator with binomial stderr.
* ``estimate_splitting``: fixed-effort multilevel splitting over the Markov
  time blocks [t_i, t_{i+1}], t_i = i c0 eps**(2/theta).  At each block
  boundary the surviving spatial profiles (the Markov state) are cloned
  uniformly with replacement back to ensemble size; the estimate is the
  product of per-block survival fractions, replicated R times for an
  honest stderr.  Only events that decompose as an intersection of
  block-measurable pieces are accepted.
* ``estimate_importance``: Girsanov tilt that linearly extinguishes the
  deterministic flow of u0 by time t1.  Simulation runs under the tilted
  measure Q (drift added) and reweights by dP/dQ computed from the
  simulated increments; self-normalization is off so the estimator stays
  unbiased, and the effective sample size is reported.

``exponent_fit`` regresses log(-log p) on log eps to recover small-ball
exponents, and ``tail_curve`` tabulates tail probabilities of sup N,
sup N-tilde and sup N-hash over the lemma-scale boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grid_noise import Grid, pack_stream_id, rng_for_stream, sample_noise
from .heat_kernel import DEFAULT_CONFIG, KernelConfig, kernel_convolve, lambda_theta
from .holder_tools import (
    HolderFunction,
    batch_spatial_sup_within,
    batch_temporal_sup_within,
    combined_seminorm,
    seminorm_diff,
    spatial_seminorm,
    temporal_seminorm,
)
from .solver import DriftSpec, SigmaSpec, solve_fd_batch, spectral_rows_batch

__all__ = [
    "EventSpec",
    "MCEstimate",
    "ExponentFit",
    "EnsembleConfig",
    "InitialProfileError",
    "event_check",
    "estimate_plain",
    "estimate_splitting",
    "GirsanovTilt",
    "girsanov_tilt",
    "rn_second_moment",
    "estimate_importance",
    "exponent_fit",
    "tail_curve",
    "block_boundaries",
]


class InitialProfileError(ValueError):
    """The initial profile violates the hypothesis of the targeted theorem."""


EVENT_KINDS = (
    "spatial_sup",
    "temporal_sup",
    "combined",
    "fixed_time",
    "fixed_point",
    "joint_with_supnorm",
    "block_U",
    "block_H",
    "block_U_time",
    "block_H_time",
    "block_T_time",
    "block_UH_all",
    "diff_h",
)


@dataclass(frozen=True)
class EventSpec:
    """A measurable predicate family on paths.

    Every kind is monotone in epsilon: a path satisfying the event at eps
    satisfies it at any larger eps.  Block kinds follow the block splitting
    t_i = i * block_c0 * eps**(2/theta); the spatial family uses thresholds
    eps/6 and 2 eps/3, the temporal family uses the Lambda-scaled
    eps/(8 Lambda), eps/(2 Lambda) and eps/2.
    """

    kind: str
    epsilon: float
    theta: float
    metric: str = "representative"
    stride: int = 1
    block_index: int = 0
    block_c0: float = 1.0
    point_index: int = 0
    h: Optional[HolderFunction] = None
    diff_kind: str = "combined"

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not 0 < self.epsilon:
            raise ValueError("epsilon must be > 0")
        if not 0 < self.theta <= 0.5:
            raise ValueError("theta must be in (0, 1/2]")
        if self.kind == "diff_h" and self.h is None:
            raise ValueError("diff_h needs a reference function h")


def block_boundaries(grid: Grid, spec: EventSpec) -> np.ndarray:
    """Row indices of the block boundaries t_i = i c0 eps**(2/theta).

    Boundaries are snapped to grid rows and deduplicated; the last block is
    extended to the final row.
    """
    width = spec.block_c0 * spec.epsilon ** (2.0 / spec.theta)
    steps = max(1, int(round(width / grid.dt)))
    rows = list(range(0, grid.n_t + 1, steps))
    if rows[-1] != grid.n_t:
        rows.append(grid.n_t)
    if len(rows) < 2:
        rows = [0, grid.n_t]
    return np.array(rows)


def _sup_rows(values: np.ndarray) -> float:
    return float(np.max(np.abs(values)))


def _spatial_sup_value(values: np.ndarray, spec: EventSpec) -> float:
    return max(spatial_seminorm(values[i], spec.theta, spec.metric).value
               for i in range(values.shape[0]))


def _block_rows(path_values: np.ndarray, grid: Grid, spec: EventSpec) -> tuple[np.ndarray, int]:
    bounds = block_boundaries(grid, spec)
    i = spec.block_index
    if not 0 <= i < len(bounds) - 1:
        raise ValueError("block_index out of range for this grid")
    lo, hi = bounds[i], bounds[i + 1]
    return path_values[lo : hi + 1], hi


def event_check(path, spec: EventSpec, grid: Optional[Grid] = None) -> bool:
    """Exact deterministic evaluation of the event predicate on one path."""
    if grid is None:
        grid = path.grid
    values = path.values if hasattr(path, "values") else np.asarray(path, dtype=float)
    if values.shape != (grid.n_t + 1, grid.n_x):
        raise ValueError("path and grid are incompatible")
    eps, theta = spec.epsilon, spec.theta

    if spec.kind == "spatial_sup":
        return _spatial_sup_value(values, spec) <= eps
    if spec.kind == "temporal_sup":
        return all(
            temporal_seminorm(values[:, j], theta, grid.T, spec.stride).value <= eps
            for j in range(grid.n_x)
        )
    if spec.kind == "combined":
        return combined_seminorm(values, theta, spec.stride, spec.metric, T=grid.T).value <= eps
    if spec.kind == "fixed_time":
        return spatial_seminorm(values[-1], theta, spec.metric).value <= eps
    if spec.kind == "fixed_point":
        return temporal_seminorm(values[:, spec.point_index], theta, grid.T, spec.stride).value <= eps
    if spec.kind == "joint_with_supnorm":
        if _sup_rows(values) > eps ** (1.0 / (2.0 * theta)):
            return False
        return combined_seminorm(values, theta, spec.stride, spec.metric, T=grid.T).value <= eps
    if spec.kind == "diff_h":
        return seminorm_diff(values, spec.h, theta, spec.diff_kind, spec.metric, spec.stride).value <= eps

    sup_scale = eps ** (1.0 / (2.0 * theta))
    if spec.kind == "block_U":
        rows, _ = _block_rows(values, grid, spec)
        return _sup_rows(rows) <= 2.0 * sup_scale / 3.0 and _sup_rows(rows[-1]) <= sup_scale / 6.0
    if spec.kind == "block_H":
        rows, _ = _block_rows(values, grid, spec)
        caps = [spatial_seminorm(rows[i], theta, spec.metric).value for i in range(rows.shape[0])]
        return max(caps) <= 2.0 * eps / 3.0 and caps[-1] <= eps / 6.0
    if spec.kind == "block_U_time":
        c2 = spec.block_c0
        scale = sup_scale / (8.0 * c2 ** (theta / 2.0 - 0.25))
        rows, _ = _block_rows(values, grid, spec)
        return _sup_rows(rows) <= 2.0 * scale and _sup_rows(rows[-1]) <= scale
    if spec.kind == "block_H_time":
        lam = lambda_theta(theta)
        rows, _ = _block_rows(values, grid, spec)
        caps = [spatial_seminorm(rows[i], theta, spec.metric).value for i in range(rows.shape[0])]
        return max(caps) <= eps / (2.0 * lam) and caps[-1] <= eps / (8.0 * lam)
    if spec.kind == "block_T_time":
        rows, hi = _block_rows(values, grid, spec)
        span = (rows.shape[0] - 1) * grid.dt
        return all(
            temporal_seminorm(rows[:, j], theta, span, spec.stride).value <= eps / 2.0
            for j in range(grid.n_x)
        )
    if spec.kind == "block_UH_all":
        bounds = block_boundaries(grid, spec)
        for i in range(len(bounds) - 1):
            sub = EventSpec(
                kind="block_U", epsilon=eps, theta=theta, metric=spec.metric,
                stride=spec.stride, block_index=i, block_c0=spec.block_c0,
            )
            if not event_check(values, sub, grid):
                return False
            sub_h = EventSpec(
                kind="block_H", epsilon=eps, theta=theta, metric=spec.metric,
                stride=spec.stride, block_index=i, block_c0=spec.block_c0,
            )
            if not event_check(values, sub_h, grid):
                return False
        return True
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class MCEstimate:
    p_hat: float
    n: int
    stderr: float
    ci95: tuple
    method: str
    seed_range: tuple
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EnsembleConfig:
    """How to generate a path ensemble: grid, coefficients, seeds, engine."""

    grid: Grid
    sigma: SigmaSpec
    u0: np.ndarray
    n: int
    base_seed: int = 0
    stream_offset: int = 0
    engine: str = "auto"  # auto | fd | spectral
    drift: Optional[DriftSpec] = None
    batch: int = 500
    enforce_hypothesis: bool = True

    def resolved_engine(self) -> str:
        if self.engine != "auto":
            return self.engine
        if self.sigma.kind == "constant" and self.drift is None:
            return "spectral"
        return "fd"


def _hypothesis_bound(spec: EventSpec) -> Optional[tuple]:
    """(holder_bound, sup_bound or None) required of u0 for theorem events."""
    eps, theta = spec.epsilon, spec.theta
    lam = lambda_theta(theta)
    if spec.kind in ("spatial_sup", "fixed_time"):
        return eps / 2.0, None
    if spec.kind in ("temporal_sup", "fixed_point"):
        return eps / (2.0 * lam), None
    if spec.kind in ("combined",):
        return eps / 2.0 * min(1.0, 1.0 / lam), None
    if spec.kind == "joint_with_supnorm":
        return eps / 2.0 * min(1.0, 1.0 / lam), eps ** (1.0 / (2.0 * theta)) / 2.0
    if spec.kind == "block_UH_all":
        return eps / 3.0, eps ** (1.0 / (2.0 * theta)) / 3.0
    return None


def _enforce_hypothesis(cfg: EnsembleConfig, spec: EventSpec) -> None:
    bound = _hypothesis_bound(spec)
    if bound is None or not cfg.enforce_hypothesis:
        return
    holder_cap, sup_cap = bound
    h0 = spatial_seminorm(cfg.u0, spec.theta, spec.metric).value
    if h0 > holder_cap:
        raise InitialProfileError(
            f"H^(theta)(u0) = {h0:.3g} exceeds the required bound {holder_cap:.3g}"
        )
    if sup_cap is not None and float(np.max(np.abs(cfg.u0))) > sup_cap:
        raise InitialProfileError(
            f"sup|u0| exceeds the required bound {sup_cap:.3g}"
        )


def _noise_batch(cfg: EnsembleConfig, stream_ids: np.ndarray) -> np.ndarray:
    g = cfg.grid
    out = np.empty((len(stream_ids), g.n_t, g.n_x))
    scale = math.sqrt(g.dt * g.dx)
    for i, sid in enumerate(stream_ids):
        out[i] = rng_for_stream(cfg.base_seed, int(sid)).standard_normal((g.n_t, g.n_x)) * scale
    return out


def _simulate_batch(cfg: EnsembleConfig, stream_ids: np.ndarray) -> np.ndarray:
    engine = cfg.resolved_engine()
    if engine == "spectral":
        if cfg.sigma.kind != "constant" or cfg.drift is not None:
            raise ValueError("spectral engine needs constant sigma and no drift")
        sigma0 = float(cfg.sigma(0.0, np.zeros(1), np.zeros(1))[0])
        return spectral_rows_batch(cfg.grid, sigma0, cfg.u0, cfg.base_seed, stream_ids)
    if engine == "fd":
        noise = _noise_batch(cfg, stream_ids)
        return solve_fd_batch(cfg.grid, cfg.sigma, cfg.u0, noise, cfg.drift)
    raise ValueError(f"unknown engine {engine!r}")


def _events_batch(values: np.ndarray, spec: EventSpec, grid: Grid) -> np.ndarray:
    """Vectorized event evaluation for a batch of paths."""
    eps, theta = spec.epsilon, spec.theta
    if spec.kind == "spatial_sup":
        return batch_spatial_sup_within(values, eps, theta, spec.metric)
    if spec.kind == "temporal_sup":
        return batch_temporal_sup_within(values, eps, theta, grid.T, spec.stride)
    if spec.kind == "combined":
        m = batch_spatial_sup_within(values, eps, theta, spec.metric)
        m[m] = batch_temporal_sup_within(values[m], eps, theta, grid.T, spec.stride)
        return m
    if spec.kind == "joint_with_supnorm":
        cap = eps ** (1.0 / (2.0 * theta))
        m = np.abs(values).max(axis=(1, 2)) <= cap
        if np.any(m):
            mm = batch_spatial_sup_within(values[m], eps, theta, spec.metric)
            mm[mm] = batch_temporal_sup_within(values[m][mm], eps, theta, grid.T, spec.stride)
            m[m] = mm
        return m
    if spec.kind == "fixed_time":
        rows = values[:, -1:, :]
        return batch_spatial_sup_within(rows, eps, theta, spec.metric)
    if spec.kind == "fixed_point":
        col = values[:, :, spec.point_index][:, :, None]
        return batch_temporal_sup_within(col, eps, theta, grid.T, spec.stride)
    return np.array([event_check(values[i], spec, grid) for i in range(values.shape[0])])


def _binomial_estimate(hits: int, n: int, method: str, seed_range: tuple,
                       extras: Optional[dict] = None) -> MCEstimate:
    p = hits / n
    se = math.sqrt(p * (1.0 - p) / n)
    if hits == 0:
        ci = (0.0, 3.0 / n)  # rule of three
    elif hits == n:
        ci = (1.0 - 3.0 / n, 1.0)
    else:
        ci = (max(0.0, p - 1.96 * se), min(1.0, p + 1.96 * se))
    return MCEstimate(p, n, se, ci, method, seed_range, extras or {})


def estimate_plain(spec: EventSpec, cfg: EnsembleConfig) -> MCEstimate:
    """Frequency estimator over n independent streams."""
    if cfg.n < 100:
        raise ValueError("need n >= 100")
    _enforce_hypothesis(cfg, spec)
    hits = 0
    done = 0
    while done < cfg.n:
        b = min(cfg.batch, cfg.n - done)
        ids = np.arange(cfg.stream_offset + done, cfg.stream_offset + done + b)
        values = _simulate_batch(cfg, ids)
        hits += int(np.sum(_events_batch(values, spec, cfg.grid)))
        done += b
    return _binomial_estimate(
        hits, cfg.n, "plain", (cfg.base_seed, cfg.stream_offset, cfg.stream_offset + cfg.n)
    )


# -- splitting ---------------------------------------------------------------

_SPLITTABLE = ("spatial_sup", "block_UH_all")


def _block_predicate(block_values: np.ndarray, spec: EventSpec, grid: Grid,
                     include_first_row: bool) -> np.ndarray:
    """Event restricted to one block for a batch (B, steps+1, n_x)."""
    rows = block_values if include_first_row else block_values[:, 1:, :]
    eps, theta = spec.epsilon, spec.theta
    if spec.kind == "spatial_sup":
        return batch_spatial_sup_within(rows, eps, theta, spec.metric)
    if spec.kind == "block_UH_all":
        cap = eps ** (1.0 / (2.0 * theta))
        ok = np.abs(rows).max(axis=(1, 2)) <= 2.0 * cap / 3.0
        ok &= np.abs(block_values[:, -1, :]).max(axis=1) <= cap / 6.0
        if np.any(ok):
            sub = batch_spatial_sup_within(rows[ok], 2.0 * eps / 3.0, theta, spec.metric)
            final = rows[ok][:, -1:, :][sub]
            sub[sub] = batch_spatial_sup_within(final, eps / 6.0, theta, spec.metric)
            ok[ok] = sub
        return ok
    raise ValueError(f"event kind {spec.kind!r} does not decompose over time blocks")


def estimate_splitting(
    spec: EventSpec,
    cfg: EnsembleConfig,
    m: int,
    replications: int,
    boundaries: Optional[Sequence[int]] = None,
) -> MCEstimate:
    """Fixed-effort multilevel splitting over the Markov time blocks.

    Simulates blocks sequentially with per-(replication, block, member)
    noise streams; members whose running blocks all hold are kept and the
    survivor profiles are resampled uniformly with replacement back to m.
    The replication estimate is the product of survival fractions; total
    extinction yields 0 for that replication and is flagged.
    """
    if spec.kind not in _SPLITTABLE:
        raise ValueError(f"splitting requires a block-decomposable event, not {spec.kind!r}")
    if m < 2 or replications < 1:
        raise ValueError("need m >= 2 and replications >= 1")
    _enforce_hypothesis(cfg, spec)
    g = cfg.grid
    bounds = np.asarray(boundaries) if boundaries is not None else block_boundaries(g, spec)
    if bounds[0] != 0 or bounds[-1] != g.n_t or np.any(np.diff(bounds) <= 0):
        raise ValueError("boundaries must increase from 0 to n_t")
    u0 = np.asarray(cfg.u0, dtype=float)

    estimates = np.empty(replications)
    extinct = []
    all_fracs = []
    for rep in range(replications):
        states = np.tile(u0, (m, 1))
        fracs = []
        alive_product = 1.0
        for bi in range(len(bounds) - 1):
            steps = int(bounds[bi + 1] - bounds[bi])
            block_vals = _advance_block(cfg, states, steps, rep, bi, start_row=int(bounds[bi]))
            ok = _block_predicate(block_vals, spec, g, include_first_row=(bi == 0))
            frac = float(np.mean(ok))
            fracs.append(frac)
            if frac == 0.0:
                alive_product = 0.0
                extinct.append(rep)
                break
            alive_product *= frac
            survivors = block_vals[ok][:, -1, :]
            rng = rng_for_stream(cfg.base_seed, pack_stream_id(rep, bi, (1 << 23) - 1))
            pick = rng.integers(0, survivors.shape[0], size=m)
            states = survivors[pick]
        estimates[rep] = alive_product
        all_fracs.append(fracs)

    p = float(np.mean(estimates))
    se = float(np.std(estimates, ddof=1) / math.sqrt(replications)) if replications > 1 else 0.0
    ci = (max(0.0, p - 1.96 * se), p + 1.96 * se)
    return MCEstimate(
        p, m * replications, se, ci, "splitting",
        (cfg.base_seed, 0, replications),
        {"replication_estimates": estimates.tolist(),
         "block_fractions": all_fracs,
         "extinct_replications": extinct,
         "boundaries": bounds.tolist()},
    )


def _advance_block(cfg: EnsembleConfig, states: np.ndarray, steps: int,
                   rep: int, block: int, start_row: int) -> np.ndarray:
    """Advance every member through one block with its own noise stream."""
    g = cfg.grid
    m = states.shape[0]
    noise = np.empty((m, steps, g.n_x))
    scale = math.sqrt(g.dt * g.dx)
    for j in range(m):
        rng = rng_for_stream(cfg.base_seed, pack_stream_id(rep, block, j))
        noise[j] = rng.standard_normal((steps, g.n_x)) * scale
    return solve_fd_batch(g, cfg.sigma, states, noise, cfg.drift,
                          n_steps=steps, t_offset=start_row * g.dt)


# -- importance sampling -----------------------------------------------------


@dataclass(frozen=True)
class GirsanovTilt:
    """Tilted dynamics that extinguish the flow of u0 linearly by time t1.

    Under the tilted measure the solution is
    (1 - t/t1) (G_t * u0)(x) + noise term, so paths are dragged toward zero
    by the terminal time.  ``drift`` is the extra forcing for the solver and
    ``log_dp_dq`` evaluates the unbiased reweighting from the simulated
    increments.
    """

    u0: np.ndarray
    t1: float
    sigma: SigmaSpec
    drift: Optional[DriftSpec]
    h_rows: np.ndarray  # (n_t, n_x) integrand h(t_m, x_k), zero when u0 is 0
    grid: Grid

    def log_dp_dq(self, noise_increments: np.ndarray) -> np.ndarray:
        """log(dP/dQ) per sample from Q-noise increments (B, n_t, n_x)."""
        if self.h_rows.size == 0:
            return np.zeros(noise_increments.shape[0])
        lin = np.einsum("btx,tx->b", noise_increments, self.h_rows)
        quad = 0.5 * float(np.sum(self.h_rows**2)) * self.grid.dt * self.grid.dx
        return lin - quad


def girsanov_tilt(u0: np.ndarray, t1: float, sigma: SigmaSpec, grid: Grid,
                  cfg: KernelConfig = DEFAULT_CONFIG) -> GirsanovTilt:
    """Build the measure change with drift g(t, x) = -(G_t * u0)(x) / t1.

    Requires sigma independent of u (the Gaussian regime).  For u0 = 0 the
    tilt is trivial: zero drift and unit weights.
    """
    if sigma.kind == "u_dependent":
        raise ValueError("the Girsanov tilt needs sigma independent of u")
    if t1 <= 0:
        raise ValueError("t1 must be > 0")
    u0 = np.asarray(u0, dtype=float)
    if not np.any(u0):
        return GirsanovTilt(u0, t1, sigma, None, np.zeros((0, 0)), grid)
    xs = grid.xs()
    flows = np.empty((grid.n_t, grid.n_x))
    for mrow in range(grid.n_t):
        flows[mrow] = kernel_convolve(u0, mrow * grid.dt, cfg)
    h_rows = np.empty_like(flows)
    for mrow in range(grid.n_t):
        s_vals = sigma(mrow * grid.dt, xs, np.zeros_like(xs))
        h_rows[mrow] = flows[mrow] / (s_vals * t1)
    flow_lookup = {mrow: flows[mrow] for mrow in range(grid.n_t)}

    def g_eval(t: float, x: np.ndarray) -> np.ndarray:
        mrow = int(round(t / grid.dt))
        row = flow_lookup.get(mrow)
        if row is None:
            row = kernel_convolve(u0, t, cfg)
        return -row / t1

    bound = float(np.max(np.abs(u0))) / t1
    return GirsanovTilt(u0, t1, sigma, DriftSpec(g_eval, bound), h_rows, grid)


def rn_second_moment(u0: np.ndarray, sigma: SigmaSpec, t1: float,
                     cfg: KernelConfig = DEFAULT_CONFIG, n_s: int = 64) -> float:
    """Closed-form E_P[(dQ/dP)**2] = exp(int_0^t1 int_T (h)**2 dy ds).

    The spatial integral uses the periodic trapezoid rule on the u0 grid
    (spectrally accurate for smooth profiles); the time integral is
    Gauss-Legendre.  Raises if sigma dips below its declared lower bound at
    a quadrature node.
    """
    if sigma.kind == "u_dependent":
        raise ValueError("rn_second_moment needs sigma independent of u")
    u0 = np.asarray(u0, dtype=float)
    if not np.any(u0):
        return 1.0
    n_x = u0.shape[0]
    xs = np.arange(n_x) / n_x
    nodes, weights = np.polynomial.legendre.leggauss(n_s)
    s_nodes = 0.5 * t1 * (nodes + 1.0)
    s_weights = 0.5 * t1 * weights
    total = 0.0
    zero = np.zeros(n_x)
    for s, w in zip(s_nodes, s_weights):
        flow = kernel_convolve(u0, float(s), cfg)
        sv = sigma(float(s), xs, zero)
        if np.any(sv < sigma.c1 - 1e-9):
            raise ValueError("sigma fell below its declared lower bound")
        total += w * float(np.mean((flow / (sv * t1)) ** 2))
    return float(math.exp(total))


def estimate_importance(spec: EventSpec, cfg: EnsembleConfig, tilt: GirsanovTilt) -> MCEstimate:
    """Unbiased importance estimator under the tilted dynamics.

    Simulates with the tilt drift added, weights each indicator by dP/dQ
    (no self-normalization), and reports the effective sample size; runs
    with ESS below 30 are flagged low-confidence.
    """
    if cfg.n < 100:
        raise ValueError("need n >= 100")
    if cfg.resolved_engine() != "fd" and tilt.drift is not None:
        raise ValueError("importance sampling requires the fd engine")
    _enforce_hypothesis(cfg, spec)
    g = cfg.grid
    w_sum = 0.0
    w2_sum = 0.0
    wi_sum = 0.0
    wi2_sum = 0.0
    done = 0
    while done < cfg.n:
        b = min(cfg.batch, cfg.n - done)
        ids = np.arange(cfg.stream_offset + done, cfg.stream_offset + done + b)
        noise = _noise_batch(cfg, ids)
        values = solve_fd_batch(g, cfg.sigma, cfg.u0, noise, tilt.drift)
        ok = _events_batch(values, spec, g)
        logw = tilt.log_dp_dq(noise)
        w = np.exp(logw)
        wi = w * ok
        w_sum += float(np.sum(w))
        w2_sum += float(np.sum(w * w))
        wi_sum += float(np.sum(wi))
        wi2_sum += float(np.sum(wi * wi))
        done += b
    n = cfg.n
    p = wi_sum / n
    var = max(0.0, wi2_sum / n - p * p)
    se = math.sqrt(var / n)
    ess = w_sum**2 / w2_sum if w2_sum > 0 else 0.0
    extras = {"effective_sample_size": ess, "low_confidence": bool(ess < 30)}
    ci = (max(0.0, p - 1.96 * se), p + 1.96 * se)
    return MCEstimate(p, n, se, ci, "importance",
                      (cfg.base_seed, cfg.stream_offset, cfg.stream_offset + n), extras)


# -- exponent fits and tail curves -------------------------------------------


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    r2: float
    table: list  # rows (epsilon, p_hat, stderr) actually fitted
    excluded: list


def exponent_fit(table: Sequence[tuple]) -> ExponentFit:
    """Weighted least squares of log(-log p) against log eps.

    For p(eps) = exp(-c eps**(-a)) the slope is exactly -a.  Weights follow
    from the delta method, Var(y) = (stderr / (p log p))**2; rows with
    p in {0, 1} carry no information about the double log and are excluded
    with a warning entry.
    """
    kept = []
    excluded = []
    for row in table:
        eps, p, se = float(row[0]), float(row[1]), float(row[2])
        if p <= 0.0 or p >= 1.0:
            excluded.append((eps, p, se, "p outside (0,1)"))
            continue
        kept.append((eps, p, se))
    if len(kept) < 4:
        raise ValueError("need at least 4 usable (eps, p) rows")
    x = np.log([r[0] for r in kept])
    p = np.array([r[1] for r in kept])
    se = np.array([r[2] for r in kept])
    y = np.log(-np.log(p))
    sig_y = np.where(se > 0, se / np.abs(p * np.log(p)), 0.0)
    if np.all(sig_y > 0):
        w = 1.0 / sig_y**2
    else:
        w = np.ones_like(y)
    wm = lambda v: np.sum(w * v) / np.sum(w)
    xc = x - wm(x)
    yc = y - wm(y)
    slope = float(np.sum(w * xc * yc) / np.sum(w * xc * xc))
    intercept = float(wm(y) - slope * wm(x))
    resid = y - (intercept + slope * x)
    ss_res = float(np.sum(w * resid**2))
    ss_tot = float(np.sum(w * yc**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ExponentFit(slope, intercept, r2, kept, excluded)


def tail_curve(
    statistic: str,
    lambdas: Sequence[float],
    cfg: EnsembleConfig,
    alpha: float,
    epsilon: float,
    theta: float,
    box_origin: float = 0.0,
) -> list:
    """Empirical tail P(statistic > lambda * scale) over the lemma box.

    The box is [0, alpha eps**(2/theta)] x [a, a + eps**(1/theta)]; the
    ensemble grid horizon must equal the box height.  Statistics: "sup_N"
    (threshold scale eps**(1/(2 theta))), "sup_Ntilde" and "sup_Nhash"
    (threshold scale eps).  Returns rows
    (lambda, p_hat, stderr, ci_lo, ci_hi).
    """
    if statistic not in ("sup_N", "sup_Ntilde", "sup_Nhash"):
        raise ValueError("statistic must be sup_N, sup_Ntilde or sup_Nhash")
    g = cfg.grid
    t_box = alpha * epsilon ** (2.0 / theta)
    if abs(g.T - t_box) > 1e-9 * max(1.0, t_box):
        raise ValueError("grid horizon must equal alpha * eps**(2/theta)")
    width = epsilon ** (1.0 / theta)
    j0 = int(round((box_origin % 1.0) / g.dx))
    j1 = j0 + int(round(width / g.dx))
    if j1 - j0 < 1 or j1 > g.n_x:
        raise ValueError("box does not fit the spatial grid")
    scale = epsilon ** (1.0 / (2.0 * theta)) if statistic == "sup_N" else epsilon

    stats = np.empty(cfg.n)
    done = 0
    while done < cfg.n:
        b = min(cfg.batch, cfg.n - done)
        ids = np.arange(cfg.stream_offset + done, cfg.stream_offset + done + b)
        values = _simulate_batch(cfg, ids)[:, :, j0 : j1 + 1]
        if statistic == "sup_N":
            stats[done : done + b] = np.abs(values).max(axis=(1, 2))
        elif statistic == "sup_Ntilde":
            stats[done : done + b] = _box_spatial_sup(values, theta, g.dx)
        else:
            stats[done : done + b] = _box_temporal_sup(values, theta, g.dt)
        done += b

    out = []
    for lam in lambdas:
        hits = int(np.sum(stats > lam * scale))
        est = _binomial_estimate(hits, cfg.n, "plain",
                                 (cfg.base_seed, cfg.stream_offset, cfg.stream_offset + cfg.n))
        out.append((float(lam), est.p_hat, est.stderr, est.ci95[0], est.ci95[1]))
    return out


def _box_spatial_sup(values: np.ndarray, theta: float, dx: float) -> np.ndarray:
    """Per-sample sup of |u(t,x)-u(t,y)| / |x-y|**(1/2-theta) inside the box."""
    q = 0.5 - theta
    b, _, w = values.shape
    out = np.zeros(b)
    for lag in range(1, w):
        d = np.abs(values[:, :, lag:] - values[:, :, :-lag]).max(axis=(1, 2))
        out = np.maximum(out, d / (lag * dx) ** q)
    return out


def _box_temporal_sup(values: np.ndarray, theta: float, dt: float) -> np.ndarray:
    qt = 0.25 - theta / 2.0
    b, rows, _ = values.shape
    out = np.zeros(b)
    for lag in range(1, rows):
        d = np.abs(values[:, lag:, :] - values[:, :-lag, :]).max(axis=(1, 2))
        out = np.maximum(out, d / (lag * dt) ** qt)
    return out
