"""Solvers for the stochastic heat equation du = (1/2) u_xx dt + g dt + sigma dW.

Two engines produce solution paths:

* ``solve_fd``: semi-implicit finite differences (implicit diffusion,
  explicit noise and drift) for any uniformly elliptic sigma(t, x, u) and
  bounded deterministic drift.  Unconditionally stable, deterministic given
  the noise field.
* ``solve_spectral_constant``: exact-in-law Fourier-mode sampler for
  constant sigma; every mode is an Ornstein-Uhlenbeck process for the
  generator (1/2) d2/dx2, stepped with its exact transition.

``noise_term`` recovers N(t, .) = u(t, .) - (G_t * u0) from a path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .grid_noise import FieldPath, Grid, NoiseField, rng_for_stream
from .heat_kernel import DEFAULT_CONFIG, KernelConfig, kernel_convolve

__all__ = [
    "SigmaSpec",
    "DriftSpec",
    "NumericalFailure",
    "solve_fd",
    "solve_fd_batch",
    "solve_spectral_constant",
    "spectral_rows_batch",
    "noise_term",
    "fd_variance_exact",
    "sigma_preset",
    "u0_preset",
]


class NumericalFailure(RuntimeError):
    """Raised when stepping produces non-finite values; carries the step index."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite values at step {step}")


@dataclass(frozen=True)
class SigmaSpec:
    """Noise coefficient sigma(t, x, u) with declared ellipticity bounds.

    ``evaluator(t, x, u)`` must accept a scalar t with array x, u and
    broadcast.  c1 <= sigma <= c2 (uniform ellipticity) and
    |sigma(t,x,u) - sigma(t,x,v)| <= lip * |u - v| are the declared bounds;
    ``validate_on_lattice`` spot-checks them.
    """

    kind: str  # "constant" | "tx_dependent" | "u_dependent"
    evaluator: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    c1: float
    c2: float
    lip: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "tx_dependent", "u_dependent"):
            raise ValueError("kind must be constant, tx_dependent or u_dependent")
        if not 0 < self.c1 <= self.c2:
            raise ValueError("need 0 < c1 <= c2")
        if self.lip < 0:
            raise ValueError("lip must be >= 0")
        if self.kind == "constant" and self.lip != 0.0:
            raise ValueError("constant sigma must declare lip = 0")

    def __call__(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.evaluator(t, x, u), dtype=float), np.broadcast_shapes(np.shape(x), np.shape(u))).copy()

    def validate_on_lattice(self, n: int = 10_000, seed: int = 0, t_max: float = 1.0,
                            u_max: float = 5.0, tol: float = 1e-9) -> None:
        """Check ellipticity and Lipschitz bounds on a random (t, x, u) lattice."""
        rng = np.random.default_rng(seed)
        t = rng.uniform(0.0, t_max, n)
        x = rng.uniform(0.0, 1.0, n)
        u = rng.uniform(-u_max, u_max, n)
        v = rng.uniform(-u_max, u_max, n)
        for i in range(0, n, 1000):
            sl = slice(i, i + 1000)
            s_u = self(float(t[i]), x[sl], u[sl])
            s_v = self(float(t[i]), x[sl], v[sl])
            if np.any(s_u < self.c1 - tol) or np.any(s_u > self.c2 + tol):
                raise ValueError("sigma violates its declared ellipticity bounds")
            if np.any(np.abs(s_u - s_v) > self.lip * np.abs(u[sl] - v[sl]) + tol):
                raise ValueError("sigma violates its declared Lipschitz bound")


@dataclass(frozen=True)
class DriftSpec:
    """Bounded deterministic drift g(t, x) with |g| <= bound."""

    evaluator: Callable[[float, np.ndarray], np.ndarray]
    bound: float

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.evaluator(t, x), dtype=float), np.shape(x)).copy()

    def validate_on_lattice(self, n: int = 10_000, seed: int = 0, t_max: float = 1.0,
                            tol: float = 1e-9) -> None:
        rng = np.random.default_rng(seed)
        t = rng.uniform(0.0, t_max, n)
        x = rng.uniform(0.0, 1.0, n)
        for i in range(0, n, 1000):
            sl = slice(i, i + 1000)
            g = self(float(t[i]), x[sl])
            if np.any(np.abs(g) > self.bound + tol):
                raise ValueError("drift violates its declared bound")


def sigma_preset(name: str, **params) -> SigmaSpec:
    """Named sigma presets used by the CLI: const, tx_cos, sin_u."""
    if name == "const":
        c = float(params.get("value", 1.0))
        return SigmaSpec("constant", lambda t, x, u: np.full(np.broadcast_shapes(np.shape(x), np.shape(u)), c), c, c, 0.0)
    if name == "tx_cos":
        base = float(params.get("base", 1.0))
        amp = float(params.get("amp", 0.25))
        speed = float(params.get("speed", 1.0))
        if not 0 <= amp < base:
            raise ValueError("tx_cos needs 0 <= amp < base")
        return SigmaSpec(
            "tx_dependent",
            lambda t, x, u: base + amp * np.cos(2 * math.pi * (x - speed * t)) + 0.0 * u,
            base - amp,
            base + amp,
            0.0,
        )
    if name == "sin_u":
        base = float(params.get("base", 1.0))
        amp = float(params.get("amp", 0.25))
        if not 0 <= amp < base:
            raise ValueError("sin_u needs 0 <= amp < base")
        return SigmaSpec(
            "u_dependent",
            lambda t, x, u: base + amp * np.sin(u) + 0.0 * x,
            base - amp,
            base + amp,
            amp,
        )
    raise ValueError(f"unknown sigma preset {name!r}")


def u0_preset(name: str, grid: Grid, **params) -> np.ndarray:
    """Named initial profiles: zero, const, cos, sin."""
    xs = grid.xs()
    if name == "zero":
        return np.zeros(grid.n_x)
    if name == "const":
        return np.full(grid.n_x, float(params.get("value", 0.0)))
    if name in ("cos", "sin"):
        amp = float(params.get("amp", 1.0))
        freq = int(params.get("freq", 1))
        f = np.cos if name == "cos" else np.sin
        return amp * f(2 * math.pi * freq * xs)
    raise ValueError(f"unknown u0 preset {name!r}")


def _implicit_multipliers(grid: Grid) -> np.ndarray:
    """Fourier symbol of (I - (dt/2) Lap_h)^(-1) for the periodic grid."""
    k = np.arange(grid.n_x // 2 + 1)
    sin2 = np.sin(math.pi * k / grid.n_x) ** 2
    return 1.0 / (1.0 + 2.0 * (grid.dt / grid.dx**2) * sin2)


def solve_fd_batch(
    grid: Grid,
    sigma: SigmaSpec,
    u0: np.ndarray,
    noise_batch: np.ndarray,
    drift: Optional[DriftSpec] = None,
    n_steps: Optional[int] = None,
    t_offset: float = 0.0,
) -> np.ndarray:
    """Semi-implicit stepping for a batch of noise realizations.

    noise_batch has shape (n_samples, n_steps, n_x); u0 is one profile or a
    per-sample batch (n_samples, n_x).  Returns (n_samples, n_steps + 1,
    n_x).  Each step solves
    (I - (dt/2) Lap_h) u^{n+1} = u^n + dt * g(t_n) + sigma(t_n, ., u^n) * dW_n / dx
    exactly by Fourier diagonalization of the periodic Laplacian;
    coefficients are evaluated at global times t_offset + n * dt.
    """
    u0 = np.asarray(u0, dtype=float)
    ns = noise_batch.shape[0]
    if n_steps is None:
        n_steps = noise_batch.shape[1]
    if noise_batch.shape[1] != n_steps or noise_batch.shape[2] != grid.n_x:
        raise ValueError("noise must have shape (n_samples, n_steps, n_x)")
    if u0.shape not in ((grid.n_x,), (ns, grid.n_x)):
        raise ValueError("u0 must have shape (n_x,) or (n_samples, n_x)")
    if not np.all(np.isfinite(u0)):
        raise ValueError("u0 must be finite")
    mult = _implicit_multipliers(grid)
    xs = grid.xs()
    out = np.empty((ns, n_steps + 1, grid.n_x))
    out[:, 0, :] = u0
    u = np.broadcast_to(u0, (ns, grid.n_x)).copy()
    inv_dx = 1.0 / grid.dx
    for n in range(n_steps):
        t_n = t_offset + n * grid.dt
        rhs = u + sigma(t_n, xs[None, :], u) * (noise_batch[:, n, :] * inv_dx)
        if drift is not None:
            rhs = rhs + grid.dt * drift(t_n, xs)[None, :]
        u = np.fft.irfft(np.fft.rfft(rhs, axis=1) * mult[None, :], n=grid.n_x, axis=1)
        if not np.all(np.isfinite(u)):
            raise NumericalFailure(n + 1)
        out[:, n + 1, :] = u
    return out


def solve_fd(
    grid: Grid,
    sigma: SigmaSpec,
    u0: np.ndarray,
    noise: NoiseField,
    drift: Optional[DriftSpec] = None,
) -> FieldPath:
    """Single-path semi-implicit solve; deterministic given (u0, noise)."""
    if noise.grid != grid:
        raise ValueError("noise must live on the same grid")
    vals = solve_fd_batch(grid, sigma, u0, noise.increments[None, :, :], drift)[0]
    return FieldPath(values=vals, grid=grid, seed_info={"engine": "fd"})


def _mode_count(n_x: int) -> int:
    # highest retained wavenumber; Nyquist excluded to keep cos/sin pairs symmetric
    return n_x // 2 - 1


def _spectral_step_params(grid: Grid, sigma0: float):
    K = _mode_count(grid.n_x)
    k = np.arange(1, K + 1)
    lam = 2.0 * math.pi**2 * k**2
    decay = np.exp(-lam * grid.dt)
    stat_sd = sigma0 * np.sqrt((1.0 - np.exp(-2.0 * lam * grid.dt)) / (2.0 * lam))
    return K, decay, stat_sd


def _modes_to_grid(a0: np.ndarray, a: np.ndarray, b: np.ndarray, n_x: int) -> np.ndarray:
    """Evaluate sum a0 + sqrt2 (a_k cos + b_k sin) on the grid via irfft."""
    batch = a0.shape[0]
    K = a.shape[1]
    spec = np.zeros((batch, n_x // 2 + 1), dtype=complex)
    spec[:, 0] = n_x * a0
    spec[:, 1 : K + 1] = n_x * (a - 1j * b) / math.sqrt(2.0)
    return np.fft.irfft(spec, n=n_x, axis=1)


def _grid_to_modes(u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_x = u.shape[-1]
    K = _mode_count(n_x)
    spec = np.fft.rfft(u, axis=-1)
    a0 = spec[..., 0].real / n_x
    a = spec[..., 1 : K + 1].real * (math.sqrt(2.0) / n_x)
    b = -spec[..., 1 : K + 1].imag * (math.sqrt(2.0) / n_x)
    return a0, a, b


def spectral_rows_batch(
    grid: Grid,
    sigma0: float,
    u0: np.ndarray,
    base_seed: int,
    stream_ids: np.ndarray,
    row_indices: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Sample u at the requested time rows for a batch of streams.

    Returns shape (len(stream_ids), len(row_indices), n_x).  Each Fourier
    mode follows its exact Ornstein-Uhlenbeck transition between requested
    rows, so the law at grid times does not depend on dt.
    """
    if sigma0 <= 0:
        raise ValueError("sigma0 must be > 0")
    u0 = np.asarray(u0, dtype=float)
    rows = np.arange(grid.n_t + 1) if row_indices is None else np.asarray(row_indices)
    if rows[0] != 0 or np.any(np.diff(rows) <= 0) or rows[-1] > grid.n_t:
        raise ValueError("row_indices must start at 0 and strictly increase")
    K = _mode_count(grid.n_x)
    a0_init, a_init, b_init = _grid_to_modes(u0)
    ns, nr = len(stream_ids), len(rows)
    out = np.empty((ns, nr, grid.n_x))
    k = np.arange(1, K + 1)
    lam = 2.0 * math.pi**2 * k**2
    # one block of normals per stream so the draw order is a pure function of
    # (base_seed, stream_id); the recursion itself is vectorized over the batch
    z = np.empty((ns, nr - 1, 2 * K + 1))
    for s, sid in enumerate(stream_ids):
        z[s] = rng_for_stream(base_seed, int(sid)).standard_normal((nr - 1, 2 * K + 1))
    a0 = np.full(ns, a0_init)
    a = np.tile(a_init, (ns, 1))
    b = np.tile(b_init, (ns, 1))
    out[:, 0, :] = u0
    for r in range(1, nr):
        gap = (rows[r] - rows[r - 1]) * grid.dt
        decay = np.exp(-lam * gap)
        sd = sigma0 * np.sqrt((1.0 - decay**2) / (2.0 * lam))
        zr = z[:, r - 1, :]
        a0 = a0 + sigma0 * math.sqrt(gap) * zr[:, 0]
        a = a * decay[None, :] + sd[None, :] * zr[:, 1 : K + 1]
        b = b * decay[None, :] + sd[None, :] * zr[:, K + 1 :]
        out[:, r, :] = _modes_to_grid(a0, a, b, grid.n_x)
    return out


def solve_spectral_constant(
    grid: Grid,
    sigma0: float,
    u0: np.ndarray,
    base_seed: int,
    stream_id: int = 0,
) -> FieldPath:
    """Exact-in-law spectral path for constant sigma.

    The truncated Fourier system keeps wavenumbers 1 .. n_x/2 - 1 plus the
    mean mode; the omitted tail contributes at most
    sigma0**2 / (2 pi**2 (n_x/2)) to any marginal variance.
    """
    vals = spectral_rows_batch(grid, sigma0, u0, base_seed, np.array([stream_id]))[0]
    return FieldPath(values=vals, grid=grid,
                     seed_info={"engine": "spectral", "base_seed": base_seed, "stream_id": stream_id})


def noise_term(path: FieldPath, u0: np.ndarray, t_index: int,
               cfg: KernelConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Noise term N(t_i, .) = u(t_i, .) - (G_{t_i} * u0) on the grid."""
    if not 0 <= t_index <= path.grid.n_t:
        raise ValueError("t_index out of range")
    u0 = np.asarray(u0, dtype=float)
    row = path.values[t_index]
    if t_index == 0 or not np.any(u0):
        return row - u0 if t_index == 0 else row.copy()
    return row - kernel_convolve(u0, t_index * path.grid.dt, cfg)


def fd_variance_exact(grid: Grid, sigma0: float, n_steps: int) -> float:
    """Exact variance of the semi-implicit scheme at step n for constant sigma.

    With update u^{n+1} = M (u^n + sigma dW / dx) the stationary point value
    is sigma**2 (dt/dx) * (1/n_x) * sum_k sum_{m=1}^{n} m_k^{2m}; used as the
    deterministic discrete oracle in the variance tests.
    """
    k = np.arange(grid.n_x)
    sin2 = np.sin(math.pi * k / grid.n_x) ** 2
    m = 1.0 / (1.0 + 2.0 * (grid.dt / grid.dx**2) * sin2)
    m2 = m * m
    # sum_{j=1}^{n} m2^j, stable for m2 -> 1 (the k = 0 mode)
    with np.errstate(divide="ignore", invalid="ignore"):
        geom = np.where(m2 > 1.0 - 1e-12, float(n_steps), m2 * (1.0 - m2**n_steps) / (1.0 - m2))
    return float(sigma0**2 * (grid.dt / grid.dx) * geom.sum() / grid.n_x)
