"""Command-line harness: configuration, dispatch, persistence, plot data.

Subcommands: simulate, smallball, exponent-fit, tail-curve, localize,
mollify, verify-kernel, verify-covariance.  Every run is reproducible from
its config and base seed alone; data CSVs carry no timestamps so identical
configs produce byte-identical files (run metadata lives in a JSON
sidecar).  Floats are serialized with 17 significant digits, '.' decimal,
RFC-4180 quoting.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gaussian_analysis import IncrementScheme, covariance_report, eta_bound
from .grid_noise import Grid, sample_noise
from .heat_kernel import (
    DEFAULT_CONFIG,
    increment_variance_quadrature,
    kernel_convolve,
    lambda_theta,
    torus_kernel,
)
from .holder_tools import HolderFunction, mollify, spatial_seminorm
from .localization import LocalizationParams, independence_probe, moment_error, picard_path
from .smallball import (
    EnsembleConfig,
    EventSpec,
    estimate_importance,
    estimate_plain,
    estimate_splitting,
    exponent_fit,
    girsanov_tilt,
    tail_curve,
)
from .solver import sigma_preset, solve_fd, solve_spectral_constant, u0_preset

SCHEMA_VERSION = 1

__all__ = ["ExperimentConfig", "ResultRecord", "run", "emit_plot_data", "main"]


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class ExperimentConfig:
    """Validated, losslessly serializable description of one experiment."""

    subcommand: str
    n_x: int = 128
    n_t: int = 64
    T: float = 0.01
    sigma_name: str = "const"
    sigma_params: dict = field(default_factory=dict)
    u0_name: str = "zero"
    u0_params: dict = field(default_factory=dict)
    theta: float = 0.25
    epsilons: list = field(default_factory=list)
    event_kind: str = "spatial_sup"
    method: str = "plain"
    n: int = 1000
    m: int = 500
    replications: int = 10
    base_seed: int = 0
    metric: str = "representative"
    stride: int = 1
    engine: str = "auto"
    out: Optional[str] = None
    schema_version: int = SCHEMA_VERSION
    extra: dict = field(default_factory=dict)

    VALID_SUBCOMMANDS = (
        "simulate", "smallball", "exponent-fit", "tail-curve",
        "localize", "mollify", "verify-kernel", "verify-covariance",
    )

    def validate(self) -> None:
        problems = []
        if self.subcommand not in self.VALID_SUBCOMMANDS:
            problems.append(f"subcommand: unknown {self.subcommand!r}")
        if not _is_power_of_two(self.n_x) or self.n_x < 8:
            problems.append("n_x: must be a power of two >= 8")
        if self.n_t < 8:
            problems.append("n_t: must be >= 8")
        if not self.T > 0:
            problems.append("T: must be > 0")
        if not 0.0 < self.theta <= 0.5:
            problems.append("theta: must be in (0, 1/2]")
        for e in self.epsilons:
            if not 0.0 < e < 1.0:
                problems.append(f"epsilons: {e} not in (0, 1)")
        if self.method not in ("plain", "splitting", "importance"):
            problems.append(f"method: unknown {self.method!r}")
        if self.metric not in ("representative", "torus"):
            problems.append(f"metric: unknown {self.metric!r}")
        if self.stride < 1:
            problems.append("stride: must be >= 1")
        if self.base_seed < 0:
            problems.append("base_seed: must be >= 0")
        if problems:
            raise ConfigError(problems)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        data = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError([f"{k}: unknown field" for k in sorted(unknown)])
        return cls(**data)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ResultRecord:
    """Rows plus provenance; rows reproduce byte-identically from the config."""

    config: ExperimentConfig
    columns: list
    rows: list
    sidecar: dict = field(default_factory=dict)

    def write(self, out_base: str) -> None:
        csv_path = out_base + ".csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([_fmt(v) for v in row])
        meta = {
            "schema_version": SCHEMA_VERSION,
            "config": json.loads(self.config.to_json()),
            "config_digest": self.config.digest(),
            "generated_unix_time": time.time(),
            **self.sidecar,
        }
        with open(out_base + ".json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


def _build_grid(cfg: ExperimentConfig) -> Grid:
    return Grid(cfg.n_x, cfg.n_t, cfg.T)


def _build_sigma(cfg: ExperimentConfig):
    return sigma_preset(cfg.sigma_name, **cfg.sigma_params)


def _build_u0(cfg: ExperimentConfig, grid: Grid) -> np.ndarray:
    return u0_preset(cfg.u0_name, grid, **cfg.u0_params)


def _run_simulate(cfg: ExperimentConfig) -> ResultRecord:
    grid = _build_grid(cfg)
    sigma = _build_sigma(cfg)
    u0 = _build_u0(cfg, grid)
    engine = cfg.engine
    if engine == "auto":
        engine = "spectral" if sigma.kind == "constant" else "fd"
    if engine == "spectral":
        path = solve_spectral_constant(grid, sigma.c1, u0, cfg.base_seed, 0)
    else:
        path = solve_fd(grid, sigma, u0, sample_noise(grid, 0, cfg.base_seed))
    cols = ["t_index", "x_index", "t", "x", "u"]
    rows = []
    for i in range(grid.n_t + 1):
        for j in range(grid.n_x):
            rows.append((i, j, i * grid.dt, j * grid.dx, path.values[i, j]))
    return ResultRecord(cfg, cols, rows, {"engine": engine})


def _run_smallball(cfg: ExperimentConfig) -> ResultRecord:
    grid = _build_grid(cfg)
    sigma = _build_sigma(cfg)
    u0 = _build_u0(cfg, grid)
    if not cfg.epsilons:
        raise ConfigError(["epsilons: need at least one value"])
    cols = ["event_kind", "epsilon", "theta", "T", "method", "n",
            "p_hat", "stderr", "ci_lo", "ci_hi", "seed_base"]
    rows = []
    for eps in cfg.epsilons:
        spec = EventSpec(cfg.event_kind, eps, cfg.theta, cfg.metric, cfg.stride,
                         block_c0=float(cfg.extra.get("block_c0", 1.0)))
        ens = EnsembleConfig(grid=grid, sigma=sigma, u0=u0, n=cfg.n,
                             base_seed=cfg.base_seed, engine=cfg.engine)
        if cfg.method == "plain":
            est = estimate_plain(spec, ens)
        elif cfg.method == "splitting":
            ens_fd = dataclasses.replace(ens, engine="fd")
            est = estimate_splitting(spec, ens_fd, m=cfg.m, replications=cfg.replications)
        else:
            t1 = float(cfg.extra.get("t1", grid.T))
            tilt = girsanov_tilt(u0, t1, sigma, grid)
            ens_fd = dataclasses.replace(ens, engine="fd")
            est = estimate_importance(spec, ens_fd, tilt)
        rows.append((cfg.event_kind, eps, cfg.theta, grid.T, est.method, est.n,
                     est.p_hat, est.stderr, est.ci95[0], est.ci95[1], cfg.base_seed))
    return ResultRecord(cfg, cols, rows)


def _run_exponent_fit(cfg: ExperimentConfig) -> ResultRecord:
    src = cfg.extra.get("input")
    if not src or not os.path.exists(src):
        raise ConfigError(["extra.input: need an existing smallball CSV"])
    table = []
    with open(src, newline="") as fh:
        for rec in csv.DictReader(fh):
            table.append((float(rec["epsilon"]), float(rec["p_hat"]), float(rec["stderr"])))
    fit = exponent_fit(table)
    cols = ["epsilon", "p_hat", "stderr", "log_eps", "log_neg_log_p"]
    rows = [(e, p, s, math.log(e), math.log(-math.log(p))) for (e, p, s) in fit.table]
    sidecar = {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2,
               "excluded_rows": fit.excluded}
    return ResultRecord(cfg, cols, rows, sidecar)


def _run_tail_curve(cfg: ExperimentConfig) -> ResultRecord:
    sigma = _build_sigma(cfg)
    alpha = float(cfg.extra.get("alpha", 1.0))
    eps = cfg.epsilons[0] if cfg.epsilons else 0.3
    lambdas = cfg.extra.get("lambdas") or [0.25 * k for k in range(13)]
    statistic = cfg.extra.get("statistic", "sup_Ntilde")
    t_box = alpha * eps ** (2.0 / cfg.theta)
    grid = Grid(cfg.n_x, cfg.n_t, t_box)
    ens = EnsembleConfig(grid=grid, sigma=sigma, u0=np.zeros(cfg.n_x), n=cfg.n,
                         base_seed=cfg.base_seed, engine=cfg.engine)
    rows = tail_curve(statistic, lambdas, ens, alpha, eps, cfg.theta)
    cols = ["lambda", "p_hat", "stderr", "ci_lo", "ci_hi"]
    return ResultRecord(cfg, cols, rows, {"statistic": statistic, "alpha": alpha,
                                          "epsilon": eps, "theta": cfg.theta})


def _run_localize(cfg: ExperimentConfig) -> ResultRecord:
    grid = _build_grid(cfg)
    sigma = _build_sigma(cfg)
    u0 = _build_u0(cfg, grid)
    beta = float(cfg.extra.get("beta", 2.0))
    levels = cfg.extra.get("levels") or list(range(1, 7))
    p_order = float(cfg.extra.get("p", 2.0))
    n_samples = cfg.n
    ref_level = max(levels) + 2
    finals = {l: np.empty((n_samples, grid.n_x)) for l in levels}
    ref = np.empty((n_samples, grid.n_x))
    for s in range(n_samples):
        noise = sample_noise(grid, s, cfg.base_seed)
        ref[s] = picard_path(grid, sigma, u0, LocalizationParams(beta, ref_level), noise).values[-1]
        for l in levels:
            finals[l][s] = picard_path(grid, sigma, u0, LocalizationParams(beta, l), noise).values[-1]
    cols = ["level", "beta", "p", "moment_error"]
    rows = [(l, beta, p_order, moment_error(finals[l], ref, p_order)) for l in levels]
    return ResultRecord(cfg, cols, rows, {"reference_level": ref_level})


def _run_mollify(cfg: ExperimentConfig) -> ResultRecord:
    grid = _build_grid(cfg)
    gamma = float(cfg.extra.get("gamma", 0.5))
    beta = float(cfg.extra.get("beta", 0.5))
    ns = cfg.extra.get("ns") or [2, 4, 8, 16, 32]
    f = HolderFunction.from_callable(
        lambda t, x: np.abs(np.sin(math.pi * x)) ** beta * (1.0 + t**gamma),
        grid, gamma, beta,
    )
    cols = ["n", "sup_error", "max_dx", "max_dxx"]
    rows = []
    for n in ns:
        fn = mollify(f, n)
        err = float(np.max(np.abs(fn - f.values)))
        dx1 = np.gradient(fn, grid.dx, axis=1)
        dx2 = np.gradient(dx1, grid.dx, axis=1)
        rows.append((n, err, float(np.max(np.abs(dx1))), float(np.max(np.abs(dx2)))))
    return ResultRecord(cfg, cols, rows, {"gamma": gamma, "beta": beta})


def _run_verify_kernel(cfg: ExperimentConfig) -> ResultRecord:
    from scipy.integrate import quad

    checks = []

    def check(name, value, tol):
        checks.append((name, value, tol, bool(abs(value) <= tol)))

    for t in (1e-4, 1e-2, 1.0):
        mass, _ = quad(lambda x: torus_kernel(t, x), 0.0, 1.0, limit=200, epsabs=1e-12)
        check(f"kernel_mass_t={t}", mass - 1.0, 1e-8)
    for s in (0.01, 0.1):
        for xz in (0.0, 0.3, 0.7):
            lhs, _ = quad(lambda y: torus_kernel(s, (xz - y) % 1.0) * torus_kernel(s, y % 1.0),
                          0.0, 1.0, limit=200, epsabs=1e-12)
            check(f"semigroup_s={s}_x={xz}", lhs - torus_kernel(2 * s, xz), 1e-8)
    check("lambda_half_minus_1", lambda_theta(0.5) - 1.0, 0.0)
    for th in [0.05 * k for k in range(1, 10)]:
        quad_val, _ = quad(lambda w: 2.0 * math.exp(-w * w / 2.0) / math.sqrt(2 * math.pi) * w ** (0.5 - th),
                           0.0, np.inf, limit=200)
        check(f"lambda_quad_theta={th:.2f}", lambda_theta(th) - quad_val, 1e-8)
    grid = Grid(256, 64, 0.05)
    u0 = np.cos(2 * math.pi * grid.xs())
    out = kernel_convolve(u0, 0.05)
    check("convolve_eigenfunction", float(np.max(np.abs(out - math.exp(-2 * math.pi**2 * 0.05) * u0))), 2e-5)
    tw = increment_variance_quadrature("time_window", (0.0, 0.01))
    check("time_window_0.01", tw - math.sqrt(0.01 / math.pi), 1e-8)

    cols = ["check", "residual", "tolerance", "passed"]
    ok = all(c[3] for c in checks)
    return ResultRecord(cfg, cols, checks, {"all_passed": ok})


def _run_verify_covariance(cfg: ExperimentConfig) -> ResultRecord:
    sigma = _build_sigma(cfg)
    eps = cfg.epsilons[0] if cfg.epsilons else 0.3
    c0 = float(cfg.extra.get("c0", 1.0))
    c1 = float(cfg.extra.get("c1", 4.0))
    scheme = IncrementScheme(epsilon=eps, theta=cfg.theta, c0=c0, c1=c1)
    rep = covariance_report(scheme, sigma)
    eta = eta_bound(scheme, sigma, rep)
    cols = ["j", "variance", "conditional_variance"]
    rows = [(j, rep.S[j, j], rep.conditional_variances[j]) for j in range(scheme.J)]
    sidecar = {
        "J": scheme.J,
        "delta": scheme.delta,
        "t1": scheme.t1,
        "norm_A_11": rep.norm_A_11,
        "norm_Sinv_11": rep.norm_Sinv_11,
        "norm_Sinv_neumann": rep.norm_Sinv_neumann,
        "eta": eta,
        "singular": rep.singular,
    }
    return ResultRecord(cfg, cols, rows, sidecar)


_RUNNERS = {
    "simulate": _run_simulate,
    "smallball": _run_smallball,
    "exponent-fit": _run_exponent_fit,
    "tail-curve": _run_tail_curve,
    "localize": _run_localize,
    "mollify": _run_mollify,
    "verify-kernel": _run_verify_kernel,
    "verify-covariance": _run_verify_covariance,
}


def run(config: ExperimentConfig) -> ResultRecord:
    """Validate, dispatch, and (if config.out is set) persist one experiment."""
    config.validate()
    record = _RUNNERS[config.subcommand](config)
    if config.out:
        record.write(config.out)
    return record


PLOT_VIEWS = {
    "smallball_curve": ["epsilon", "p_hat", "ci_lo", "ci_hi", "method"],
    "exponent_fit": ["log_eps", "log_neg_log_p", "p_hat", "stderr"],
    "tail_curve": ["lambda", "p_hat", "ci_lo", "ci_hi"],
    "picard_decay": ["level", "moment_error"],
}


def emit_plot_data(record: ResultRecord, view: str, out_base: str) -> str:
    """Write a tidy per-point CSV for the requested view; returns the path."""
    if view not in PLOT_VIEWS:
        raise ValueError(f"unknown view {view!r}")
    want = PLOT_VIEWS[view]
    have = {c: i for i, c in enumerate(record.columns)}
    missing = [c for c in want if c not in have and c != "method"]
    if missing:
        raise ValueError(f"record lacks columns {missing} for view {view!r}")
    path = out_base + f".{view}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        cols = [c for c in want if c in have or c == "method"]
        w.writerow(cols)
        for row in record.rows:
            out_row = []
            for c in cols:
                if c in have:
                    out_row.append(_fmt(row[have[c]]))
                else:
                    out_row.append(record.config.method)
            w.writerow(out_row)
    if view == "exponent_fit" and "slope" in record.sidecar:
        with open(out_base + f".{view}.meta.json", "w") as fh:
            json.dump({k: record.sidecar[k] for k in ("slope", "intercept", "r2")},
                      fh, indent=2, sort_keys=True)
    return path


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--n-x", type=int, dest="n_x")
    p.add_argument("--n-t", type=int, dest="n_t")
    p.add_argument("--T", type=float, dest="T")
    p.add_argument("--sigma", dest="sigma_name")
    p.add_argument("--sigma-param", action="append", default=None,
                   help="key=value, repeatable")
    p.add_argument("--u0", dest="u0_name")
    p.add_argument("--u0-param", action="append", default=None)
    p.add_argument("--theta", type=float)
    p.add_argument("--eps", type=float, action="append", dest="epsilons")
    p.add_argument("--event", dest="event_kind")
    p.add_argument("--method")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int, dest="base_seed")
    p.add_argument("--metric")
    p.add_argument("--stride", type=int)
    p.add_argument("--engine")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: SHELAB_THREADS or 1)")
    p.add_argument("--out")
    p.add_argument("--extra", action="append", default=None,
                   help="key=json_value for subcommand extras, repeatable")


def _parse_kv(pairs) -> dict:
    out = {}
    for kv in pairs or ():
        if "=" not in kv:
            raise ConfigError([f"malformed key=value: {kv!r}"])
        k, v = kv.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def build_config(argv) -> ExperimentConfig:
    parser = argparse.ArgumentParser(prog="shelab", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in ExperimentConfig.VALID_SUBCOMMANDS:
        _add_common(sub.add_parser(name))
    ns = parser.parse_args(argv)

    if ns.config:
        with open(ns.config) as fh:
            cfg = ExperimentConfig.from_json(fh.read())
        cfg.subcommand = ns.subcommand
    else:
        cfg = ExperimentConfig(subcommand=ns.subcommand)
    for f_ in dataclasses.fields(ExperimentConfig):
        if f_.name in ("subcommand", "sigma_params", "u0_params", "extra", "schema_version"):
            continue
        val = getattr(ns, f_.name, None)
        if val is not None:
            setattr(cfg, f_.name, val)
    if ns.sigma_param:
        cfg.sigma_params.update(_parse_kv(ns.sigma_param))
    if ns.u0_param:
        cfg.u0_params.update(_parse_kv(ns.u0_param))
    if ns.extra:
        cfg.extra.update(_parse_kv(ns.extra))
    threads = ns.threads if ns.threads is not None else int(os.environ.get("SHELAB_THREADS", "1"))
    cfg.extra.setdefault("threads", threads)
    return cfg


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = build_config(argv)
        record = run(cfg)
    except ConfigError as exc:
        json.dump({"error": "config", "problems": exc.problems}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except Exception as exc:  # numerical or IO failure: machine-readable context
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    if cfg.subcommand == "verify-kernel" and not record.sidecar.get("all_passed", True):
        sys.stdout.write("verify-kernel: FAILED\n")
        return 1
    if not cfg.out:
        w = csv.writer(sys.stdout)
        w.writerow(record.columns)
        for row in record.rows[:50]:
            w.writerow([_fmt(v) for v in row])
        if len(record.rows) > 50:
            sys.stdout.write(f"# ... {len(record.rows) - 50} more rows (use --out)\n")
        if record.sidecar:
            sys.stdout.write("# sidecar: " + json.dumps(record.sidecar, default=str, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
