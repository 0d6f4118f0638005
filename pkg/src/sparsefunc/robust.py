"""Robust estimation of a common Gaussian mean with outlying columns.

Model: Y_i = mu + theta_i + sigma * xi_i, where only a few theta_i are
nonzero.  Estimators here return mu_hat (and, where relevant, an estimate
of L_n(Theta), the average of the theta_i).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .bounds import recursion_envelope
from .core import (
    EstimateResult,
    SparsityPattern,
    ValidationError,
    as_matrix,
    center_columns,
    check_delta,
    check_sigma,
)

WARN_GUARD = "outlier_fraction_above_n_over_32"
WARN_GAMMA = "gamma_below_shrinkage_condition"
WARN_ENVELOPE = "envelope_inapplicable"
WARN_NOT_CONVERGED = "group_lasso_not_converged"
WARN_NO_OUTLIERS = "s_zero_sample_mean"


@dataclass
class RobustInstanceView:
    Y: np.ndarray
    sigma: float
    s: int
    delta: float = 0.1

    def __post_init__(self):
        self.Y = as_matrix(self.Y, "Y")
        self.sigma = check_sigma(self.sigma)
        self.delta = check_delta(self.delta)
        if not 0 <= self.s <= self.Y.shape[1]:
            raise ValidationError(f"s={self.s} must lie in [0, n={self.Y.shape[1]}]")

    @property
    def p(self) -> int:
        return self.Y.shape[0]

    @property
    def n(self) -> int:
        return self.Y.shape[1]

    @property
    def warnings(self) -> list[str]:
        return [WARN_GUARD] if 32 * self.s > self.n else []


@dataclass
class IstState:
    """One entry of the IST trace.

    Entry k >= 1 holds the gamma used in iteration k, the error bound
    epsilon produced by that iteration, and L_n(Theta_hat) after it.
    Entry 0 holds the initial bound and the group-lasso L_n; gamma is 0.
    """

    epsilon: float
    gamma: float
    L_hat: np.ndarray
    iteration: int
    flags: list[str] = field(default_factory=list)


@dataclass
class GroupLassoResult:
    mu_hat: np.ndarray
    theta_hat: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    objective_trace: list[float] = field(default_factory=list)


def sample_mean(Y) -> np.ndarray:
    return as_matrix(Y, "Y").mean(axis=1)


def coordinatewise_median(Y) -> np.ndarray:
    return np.median(as_matrix(Y, "Y"), axis=1)


def group_lasso_lambda(sigma: float, p: int, n: int, delta: float) -> float:
    sigma = check_sigma(sigma)
    return math.sqrt(32 * sigma**2 * p + 256 * sigma**2 * math.log(n / check_delta(delta)))


def _group_prox(R: np.ndarray, radius: float) -> np.ndarray:
    norms = np.linalg.norm(R, axis=0)
    scale = np.zeros_like(norms)
    nz = norms > radius
    scale[nz] = 1.0 - radius / norms[nz]
    return R * scale


def _objective(Y, m, T, lam) -> float:
    R = Y - m[:, None] - T
    return float(np.sum(R * R) + lam * np.linalg.norm(T, axis=0).sum())


def kkt_residual(Y, mu_hat, theta_hat, lam) -> float:
    """Largest violation of the first-order conditions in the theta blocks."""
    R = Y - mu_hat[:, None]
    tn = np.linalg.norm(theta_hat, axis=0)
    nz = tn > 0
    res = np.maximum(2 * np.linalg.norm(R, axis=0) - lam, 0.0)
    if nz.any():
        g = -2 * (R[:, nz] - theta_hat[:, nz]) + lam * theta_hat[:, nz] / tn[nz]
        res[nz] = np.linalg.norm(g, axis=0)
    return float(res.max())


def group_lasso_fit(view: RobustInstanceView, lam: float, tol: float = 1e-10,
                    max_iter: int = 10_000) -> GroupLassoResult:
    """Minimize sum_i ||Y_i - m - t_i||^2 + lam * sum_i ||t_i|| over (m, T).

    Alternates the two exact block updates (m is the mean of Y - T; each t_i
    is the group soft threshold of Y_i - m at radius lam/2), ending every
    sweep with the m update so that mu_hat = L_n(Y) - L_n(Theta_hat).
    Stops once the KKT residual is <= tol; if that never happens within
    max_iter sweeps, the last iterate is returned with converged=False.
    """
    if view.n < 2:
        raise ValidationError("group_lasso_fit needs n >= 2")
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    Y = view.Y
    T = np.zeros_like(Y)
    m = Y.mean(axis=1)
    trace = [_objective(Y, m, T, lam)]
    kkt = kkt_residual(Y, m, T, lam)
    it = 0
    while kkt > tol and it < max_iter:
        it += 1
        T = _group_prox(Y - m[:, None], lam / 2)
        m_new = (Y - T).mean(axis=1)
        stalled = np.array_equal(m_new, m)
        m = m_new
        trace.append(_objective(Y, m, T, lam))
        kkt = kkt_residual(Y, m, T, lam)
        if stalled:
            break
    return GroupLassoResult(m, T, trace[-1], kkt, it, kkt <= tol, trace)


class DeviationCheck(NamedTuple):
    theta_frobenius: bool
    functional: bool
    mean: bool
    guard_ok: bool


def group_lasso_bounds(lam: float, sigma: float, p: int, n: int, s: int, delta: float) -> tuple[float, float, float]:
    """High-probability bounds on ||Theta - Theta_hat||_F^2,
    ||L_n(Theta_hat) - L_n(Theta)||^2 and ||mu_hat - mu||^2."""
    f = 288 * s**2 * lam**2 / n**2
    return 9 * s * lam**2, f, f + 4 * sigma**2 * p / n + 8 * sigma**2 * math.log(2 / delta) / n


def group_lasso_mu_deviation_check(result: GroupLassoResult, mu, theta, lam: float,
                                   sigma: float, delta: float, s: int) -> DeviationCheck:
    theta = as_matrix(theta, "theta")
    p, n = theta.shape
    b_theta, b_fun, b_mu = group_lasso_bounds(lam, sigma, p, n, s, delta)
    d_theta = float(np.sum((theta - result.theta_hat) ** 2))
    d_fun = float(np.sum((result.theta_hat.mean(axis=1) - theta.mean(axis=1)) ** 2))
    d_mu = float(np.sum((result.mu_hat - np.asarray(mu, dtype=float)) ** 2))
    return DeviationCheck(d_theta <= b_theta, d_fun <= b_fun, d_mu <= b_mu, 32 * s <= n)


# -- iterative soft thresholding -------------------------------------------

def robust_shrink(Z, sigma: float, gamma: float, n: int, p: int) -> np.ndarray:
    """Shrink Z by (1 - sigma*gamma / sqrt(||Z||^2 - (n-1)/n sigma^2 p)_+)_+.

    Works column-wise when Z is a (p, k) array.
    """
    if n < 2:
        raise ValidationError("robust_shrink needs n >= 2")
    Z = np.asarray(Z, dtype=float)
    col = Z.ndim == 1
    Zm = Z.reshape(-1, 1) if col else Z
    excess = np.sum(Zm * Zm, axis=0) - (n - 1) / n * sigma**2 * p
    w = np.zeros(Zm.shape[1])
    live = excess > 0
    w[live] = np.maximum(1.0 - sigma * gamma / np.sqrt(excess[live]), 0.0)
    out = Zm * w
    return out[:, 0] if col else out


def ist_gamma(epsilon: float, p: int) -> float:
    if epsilon < 0:
        raise ValidationError("epsilon must be nonnegative")
    e2 = epsilon * epsilon
    return math.sqrt(8 * e2 + 4 * math.sqrt(4 * e2 * e2 + p * e2))


def ist_a(s: int, n: int, p: int, delta: float) -> float:
    """Gamma-free part of the epsilon update."""
    return 4 / n * (s + math.sqrt(s * p) + math.sqrt(2 * s * math.log(4 / delta)))


def ist_epsilon_a(s: int, n: int, p: int, gamma: float, delta: float) -> float:
    return 4 / n * s * gamma + ist_a(s, n, p, delta)


def ist_gamma_condition(p: int, n: int, delta: float) -> float:
    """Smallest gamma^2 (exclusive) for which the one-step guarantee applies."""
    t = math.log(4 * n / delta)
    return 4 * t + 4 * math.sqrt(p * t)


def ist_estimate(view: RobustInstanceView, N: int, tol: float = 1e-10, max_iter: int = 10_000):
    """Iterative soft thresholding.

    Returns (result for L_n, result for mu, trace).  The group-lasso fit at
    lambda^2 = 32 sigma^2 (p + 8 log(n/delta)) initializes Theta_hat; each
    of the N iterations then re-shrinks the centered columns shifted by the
    current L_n estimate, with the shrinkage level gamma driven by the
    running error bound epsilon.
    """
    Y, sigma, s, delta = view.Y, view.sigma, view.s, view.delta
    p, n = view.p, view.n
    if n < 2:
        raise ValidationError("ist_estimate needs n >= 2")
    if N < 1:
        raise ValidationError("N must be >= 1")
    warnings = list(view.warnings)
    LnY = Y.mean(axis=1)

    if s == 0:
        warnings.append(WARN_NO_OUTLIERS)
        zero = np.zeros(p)
        return (EstimateResult(zero, SparsityPattern(n), 0, warnings),
                EstimateResult(LnY, None, 0, list(warnings)), [])

    lam = math.sqrt(32 * sigma**2 * (p + 8 * math.log(n / delta)))
    gl = group_lasso_fit(view, lam, tol, max_iter)
    if not gl.converged:
        warnings.append(WARN_NOT_CONVERGED)
    theta = gl.theta_hat
    eps = math.sqrt(288) * s * lam / (n * sigma)
    eps0 = eps
    a = ist_a(s, n, p, delta)
    gamma_floor = ist_gamma_condition(p, n, delta)
    env_ok = recursion_envelope(eps0, s, n, p, a, 0).applicable
    trace = [IstState(eps, 0.0, theta.mean(axis=1), 0, [] if env_ok else [WARN_ENVELOPE])]
    if not env_ok:
        warnings.append(WARN_ENVELOPE)

    YPi = center_columns(Y)
    for k in range(1, N + 1):
        L_hat = theta.mean(axis=1)
        gamma = ist_gamma(eps, p)
        Z = YPi + L_hat[:, None]
        theta = robust_shrink(Z, sigma, gamma, n, p)
        eps = ist_epsilon_a(s, n, p, gamma, delta)
        flags = []
        if gamma * gamma <= gamma_floor:
            flags.append(WARN_GAMMA)
            if WARN_GAMMA not in warnings:
                warnings.append(WARN_GAMMA)
        trace.append(IstState(eps, gamma, theta.mean(axis=1), k, flags))

    L_ist = theta.mean(axis=1)
    support = SparsityPattern.from_mask(np.linalg.norm(theta, axis=0) > 0)
    info = {"lambda_init": lam, "a": a, "group_lasso_iterations": gl.iterations}
    return (EstimateResult(L_ist, support, N, warnings, info),
            EstimateResult(LnY - L_ist, None, N, list(warnings), dict(info)),
            trace)
