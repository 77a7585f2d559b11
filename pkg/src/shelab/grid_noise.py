"""Space-time lattice, reproducible white-noise sampling, and path storage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Grid", "NoiseField", "FieldPath", "sample_noise", "pack_stream_id"]


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Uniform lattice on [0, T] x T with n_t time steps and n_x spatial cells.

    n_x must be a power of two so that dx = 1/n_x is an exact binary float
    and dx * n_x == 1 holds exactly.  The stored horizon is dt * n_t, which
    differs from the requested T by at most one rounding.
    """

    n_x: int
    n_t: int
    T: float

    def __post_init__(self) -> None:
        if not _is_power_of_two(self.n_x) or self.n_x < 8:
            raise ValueError("n_x must be a power of two >= 8")
        if self.n_t < 8:
            raise ValueError("n_t must be >= 8")
        if not self.T > 0:
            raise ValueError("T must be > 0")
        object.__setattr__(self, "T", (self.T / self.n_t) * self.n_t)

    @property
    def dx(self) -> float:
        return 1.0 / self.n_x

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    def xs(self) -> np.ndarray:
        """Spatial nodes j * dx, j = 0 .. n_x - 1."""
        return np.arange(self.n_x) * self.dx

    def ts(self) -> np.ndarray:
        """Time nodes i * dt, i = 0 .. n_t."""
        return np.arange(self.n_t + 1) * self.dt

    def time_index(self, t: float) -> int:
        """Nearest time index for t, refusing values outside [0, T]."""
        i = int(round(t / self.dt))
        if not 0 <= i <= self.n_t or abs(i * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"t={t} is not a grid time")
        return i


@dataclass(frozen=True)
class NoiseField:
    """Discrete space-time white noise increments, one per (step, cell).

    Each entry is N(0, dt * dx), independent across entries.  Values are
    immutable after creation and safe to ship between workers.
    """

    increments: np.ndarray
    grid: Grid

    def __post_init__(self) -> None:
        inc = np.asarray(self.increments, dtype=float)
        if inc.shape != (self.grid.n_t, self.grid.n_x):
            raise ValueError("increments must have shape (n_t, n_x)")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)


@dataclass
class FieldPath:
    """One sampled trajectory: (n_t + 1) x n_x array of field values.

    Row 0 is the initial profile.  ``seed_info`` records RNG provenance
    (base seed, stream id, engine) so any path can be regenerated.
    """

    values: np.ndarray
    grid: Grid
    seed_info: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_t + 1, self.grid.n_x):
            raise ValueError("values must have shape (n_t + 1, n_x)")
        if not np.all(np.isfinite(v)):
            raise ValueError("FieldPath values must be finite")
        self.values = v

    def row(self, i: int) -> np.ndarray:
        return self.values[i]


_PACK_LIMITS = (1 << 20, 1 << 20, 1 << 23)


def pack_stream_id(rep: int, block: int, member: int) -> int:
    """Pack a (replication, block, member) triple into one 64-bit stream id.

    Keeps ensemble work items addressable by a single integer so results are
    independent of worker scheduling.
    """
    for v, lim in zip((rep, block, member), _PACK_LIMITS):
        if not 0 <= v < lim:
            raise ValueError("stream component out of packing range")
    return (rep << 43) | (block << 23) | member


def rng_for_stream(base_seed: int, stream_id: int) -> np.random.Generator:
    """Deterministic generator for substream (base_seed, stream_id)."""
    if base_seed < 0 or stream_id < 0:
        raise ValueError("seeds must be nonnegative")
    return np.random.default_rng(np.random.SeedSequence([base_seed, stream_id]))


def sample_noise(grid: Grid, stream_id: int, base_seed: int) -> NoiseField:
    """Sample one NoiseField from the counter-keyed substream.

    Identical (base_seed, stream_id) gives bit-identical output regardless
    of how many workers are running or in what order.
    """
    rng = rng_for_stream(base_seed, stream_id)
    scale = np.sqrt(grid.dt * grid.dx)
    inc = rng.standard_normal((grid.n_t, grid.n_x)) * scale
    return NoiseField(increments=inc, grid=grid)
