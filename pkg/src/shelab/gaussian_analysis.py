"""Quadrature covariances of discrete spatial increments and matrix bounds.

For time spacing t1 = c0 * delta**2 and spatial points x_j = j * c1 * delta
(delta = eps**(1/theta)), the centered increments

    D_k = N(t1, x_k + delta) - N(t1, x_k)

of the Gaussian field (sigma independent of u) have covariance

    Cov(D_k, D_l) = int_0^t1 int_T [G(a, x_k + d - y) - G(a, x_k - y)]
                                 * [G(a, x_l + d - y) - G(a, x_l - y)]
                                 * sigma(t1 - a, y)**2  dy da.

This module computes those entries by genuine 2-D quadrature, assembles the
covariance matrix S = D (I - A) D, evaluates the induced (1,1) norms, and
extracts per-index conditional variances through the Cholesky factor (the
squared Cholesky diagonal is exactly the sequential Schur complement).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr

from .heat_kernel import DEFAULT_CONFIG, KernelConfig, torus_kernel
from .solver import SigmaSpec

__all__ = [
    "IncrementScheme",
    "CovarianceReport",
    "increment_covariance",
    "covariance_report",
    "eta_bound",
]

SigmaTX = Union[SigmaSpec, Callable[[float, np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class IncrementScheme:
    """Discretization eps**(1/theta)-spaced in space, eps**(2/theta) in time."""

    epsilon: float
    theta: float
    c0: float = 1.0
    c1: float = 4.0

    def __post_init__(self) -> None:
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must be in (0, 1)")
        if not 0 < self.theta <= 0.5:
            raise ValueError("theta must be in (0, 1/2]")
        if self.c0 <= 0 or self.c1 <= 0:
            raise ValueError("c0, c1 must be > 0")
        if self.J < 1:
            raise ValueError("c1 * delta >= 1 leaves no increment sites")

    @property
    def delta(self) -> float:
        return self.epsilon ** (1.0 / self.theta)

    @property
    def t1(self) -> float:
        return self.c0 * self.delta**2

    @property
    def J(self) -> int:
        return int(math.floor(1.0 / (self.c1 * self.delta)))

    def site(self, j: int) -> float:
        if not 0 <= j <= self.J:
            raise ValueError("site index out of range")
        return j * self.c1 * self.delta


def _sigma_tx_callable(sigma: SigmaTX) -> Callable[[float, np.ndarray], np.ndarray]:
    if isinstance(sigma, SigmaSpec):
        if sigma.kind == "u_dependent":
            raise ValueError("covariance quadrature requires sigma independent of u")
        return lambda t, y: sigma(t, y, np.zeros_like(y))
    return sigma


def _is_shift_invariant(sigma: SigmaTX) -> bool:
    return isinstance(sigma, SigmaSpec) and sigma.kind == "constant"


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _graded_mesh(centers: np.ndarray, width: float) -> np.ndarray:
    """Panel edges over one period, geometrically graded around each center.

    The period is anchored at the midpoint of the largest cyclic gap between
    centers so no bump sits near the interval ends; panels shrink to
    ``width`` next to every center and grow by factor 2 away from it.
    """
    c = np.sort(centers % 1.0)
    gaps = np.diff(np.concatenate([c, [c[0] + 1.0]]))
    g = int(np.argmax(gaps))
    origin = c[g] + gaps[g] / 2.0
    cu = np.sort((c - origin) % 1.0)  # centers in (0, 1), away from 0 and 1
    edges = {0.0, 1.0}
    for ci in cu:
        edges.add(ci)
        for sgn in (-1.0, 1.0):
            r = width
            while r < 1.0:
                e = ci + sgn * r
                if 0.0 < e < 1.0:
                    edges.add(e)
                r *= 2.0
    out = np.array(sorted(edges))
    return out + origin  # nodes are evaluated mod 1 later


def increment_covariance(
    k: int,
    l: int,
    scheme: IncrementScheme,
    sigma_tx: SigmaTX,
    cfg: KernelConfig = DEFAULT_CONFIG,
) -> float:
    """Cov(D_k, D_l) by 2-D quadrature over kernel age and the torus.

    The kernel-age integral is adaptive with the substitution a = r**2 to
    absorb the a**(-1/2) endpoint singularity.  The spatial integral uses
    composite Gauss-Legendre on a mesh graded to the bump width sqrt(a)
    around the four kernel centers.  For constant sigma the result must
    match the one-dimensional semigroup reduction
    int_0^t1 [2 G(2a, d) - G(2a, d + delta) - G(2a, d - delta)] da
    (d = x_k - x_l) within 1e-8, which the tests enforce.
    """
    if not (0 <= k < scheme.J and 0 <= l < scheme.J):
        raise ValueError("increment indices must lie in [0, J)")
    sig = _sigma_tx_callable(sigma_tx)
    d = scheme.delta
    t1 = scheme.t1
    xk, xl = scheme.site(k), scheme.site(l)
    centers = np.array([c % 1.0 for c in (xk, xk + d, xl, xl + d)])

    def inner(a: float) -> float:
        edges = _graded_mesh(centers, max(math.sqrt(a), 1e-9))
        lo, hi = edges[:-1], edges[1:]
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        y = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
        gk = torus_kernel(a, (xk + d - y) % 1.0, cfg) - torus_kernel(a, (xk - y) % 1.0, cfg)
        gl = torus_kernel(a, (xl + d - y) % 1.0, cfg) - torus_kernel(a, (xl - y) % 1.0, cfg)
        s = np.asarray(sig(t1 - a, y % 1.0), dtype=float)
        return float(np.sum(w * gk * gl * s * s))

    out, _ = quad(lambda r: 2.0 * r * inner(r * r), 0.0, math.sqrt(t1),
                  limit=cfg.quad_max_subdiv, epsabs=1e-10, epsrel=1e-9)
    return out


@dataclass
class CovarianceReport:
    """Covariance matrix of the increments with its norm and Schur data."""

    scheme: IncrementScheme
    S: np.ndarray
    D: np.ndarray  # standard deviations, diagonal of the scaling matrix
    A: np.ndarray  # I - D^-1 S D^-1
    norm_A_11: float
    norm_Sinv_11: Optional[float]
    norm_Sinv_neumann: Optional[float]
    conditional_variances: np.ndarray
    singular: bool = False
    notes: list = field(default_factory=list)


def covariance_report(
    scheme: IncrementScheme,
    sigma_tx: SigmaTX,
    cfg: KernelConfig = DEFAULT_CONFIG,
    assume_toeplitz: Optional[bool] = None,
) -> CovarianceReport:
    """Assemble S and derived quantities for increments k = 0 .. J-1.

    When sigma is constant the matrix is Toeplitz and only the first column
    is quadratured.  Near-singular S is reported, not fatal: the Cholesky
    factorization falls back to an eigenvalue-floored factor and the report
    is flagged.
    """
    J = scheme.J
    toeplitz = _is_shift_invariant(sigma_tx) if assume_toeplitz is None else assume_toeplitz
    S = np.empty((J, J))
    if toeplitz:
        col = np.array([increment_covariance(j, 0, scheme, sigma_tx, cfg) for j in range(J)])
        for i in range(J):
            for j in range(J):
                S[i, j] = col[abs(i - j)]
    else:
        for i in range(J):
            for j in range(i, J):
                S[i, j] = S[j, i] = increment_covariance(i, j, scheme, sigma_tx, cfg)
    stds = np.sqrt(np.diag(S))
    corr = S / np.outer(stds, stds)
    A = np.eye(J) - corr
    norm_A = float(np.max(np.sum(np.abs(A), axis=0)))

    notes = []
    singular = False
    try:
        L = np.linalg.cholesky(S)
        cond_var = np.diag(L) ** 2
    except np.linalg.LinAlgError:
        singular = True
        notes.append("S not positive definite within roundoff; eigenvalues floored")
        w, V = np.linalg.eigh(S)
        w_floored = np.maximum(w, 1e-14 * np.max(w))
        S_reg = (V * w_floored) @ V.T
        L = np.linalg.cholesky(S_reg)
        cond_var = np.diag(L) ** 2

    norm_Sinv = None
    if not singular:
        Sinv = np.linalg.inv(S)
        norm_Sinv = float(np.max(np.sum(np.abs(Sinv), axis=0)))
    norm_neumann = None
    if norm_A < 1.0:
        dinv = 1.0 / np.min(stds) ** 2
        norm_neumann = float(dinv / (1.0 - norm_A))

    return CovarianceReport(
        scheme=scheme,
        S=S,
        D=stds,
        A=A,
        norm_A_11=norm_A,
        norm_Sinv_11=norm_Sinv,
        norm_Sinv_neumann=norm_neumann,
        conditional_variances=cond_var,
        singular=singular,
        notes=notes,
    )


def eta_bound(
    scheme: IncrementScheme,
    sigma_tx: SigmaTX,
    report: Optional[CovarianceReport] = None,
    cfg: KernelConfig = DEFAULT_CONFIG,
) -> float:
    """Per-site bound eta = P(|Z| <= eps**(1/(2 theta)) / sqrt(min cond var)).

    A standard normal stays inside the small-ball threshold with at most
    this probability once the conditional variance is bounded below, so
    eta**J dominates the probability that every increment is small.
    """
    if report is None:
        report = covariance_report(scheme, sigma_tx, cfg)
    min_cv = float(np.min(report.conditional_variances))
    if not np.isfinite(min_cv) or min_cv <= 0:
        raise ValueError("degenerate conditional variance")
    thresh = scheme.epsilon ** (1.0 / (2.0 * scheme.theta)) / math.sqrt(min_cv)
    eta = float(2.0 * ndtr(thresh) - 1.0)
    if not eta < 1.0:
        # erf saturates in double precision around 9 sigma
        eta = 1.0 - 1e-16
    return eta
