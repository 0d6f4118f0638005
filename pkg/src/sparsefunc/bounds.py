"""Analytic tail/norm bounds and brute-force reference implementations.

Nothing in this module calls into the estimator modules: the oracles
(`gss_bruteforce`, `prox_grouplasso_numeric`) are separate code paths so
that agreement between them and the estimators means something.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar

from .core import SparsityPattern, ValidationError, as_matrix

UPPER = "upper"
LOWER = "lower"


@dataclass
class BoundReport:
    """Comparison of an analytic bound with its empirical counterpart.

    For upper bounds `holds` means empirical <= bound + slack; for lower
    bounds, empirical >= bound - slack.  `slack` is a 3-sigma Monte Carlo
    half-width (0 for deterministic checks).
    """

    bound_value: float
    empirical_value: float
    trials: int
    holds: bool
    slack: float = 0.0
    kind: str = UPPER


def _report(bound, empirical, trials, slack=0.0, kind=UPPER) -> BoundReport:
    if kind == UPPER:
        holds = empirical <= bound + slack
    else:
        holds = empirical >= bound - slack
    return BoundReport(float(bound), float(empirical), int(trials), bool(holds), float(slack), kind)


def chi2_tail_bound(d: int, x: float) -> float:
    """Upper bound on P(eta >= d + x) for eta ~ chi^2_d."""
    if d < 1 or not x > 0:
        raise ValidationError("need d >= 1 and x > 0")
    return math.exp(-x * min(x, 4 * d) / (16 * d))


def chi2_truncated_mean_bound(d: int, x: float) -> float:
    """Upper bound on E[eta 1{eta >= d + x}] for eta ~ chi^2_d, d >= 2."""
    if d < 2 or not x > 0:
        raise ValidationError("need d >= 2 and x > 0")
    if x < 4 * d:
        return 2 * d * math.exp(-x * x / (32 * d))
    return 2 * x * math.exp(-x / 4)


def centered_column_norm_bound(p: int, n: int, delta: float) -> float:
    """Level exceeded by max_i ||(Xi Pi)_i||^2 with probability <= delta."""
    if n < 2:
        raise ValidationError("need n >= 2")
    return 2 * p + 16 * math.log(n / delta)


class GaussianNormBounds(NamedTuple):
    deviation_bound: float
    expectation_sq_bound: float
    failure_probability: float


def gaussian_matrix_norm_bounds(N: int, n: int, t: float) -> GaussianNormBounds:
    """Spectral-norm bounds for an N x n standard Gaussian matrix A:
    ||A|| <= sqrt(N) + sqrt(n) + t except with probability
    2 exp(-t^2/2), and E||A||^2 <= 3N + 3n + 12."""
    if t < 0:
        raise ValidationError("t must be nonnegative")
    return GaussianNormBounds(math.sqrt(N) + math.sqrt(n) + t, 3 * N + 3 * n + 12.0,
                              2 * math.exp(-t * t / 2))


def cone_condition_holds(U: np.ndarray, S: SparsityPattern, a: float, rtol: float = 1e-12) -> bool:
    norms = np.linalg.norm(U, axis=0)
    mask = S.mask()
    off, on = norms[~mask].sum(), norms[mask].sum()
    return off <= a * on * (1 + rtol)


def projection_cone_check(U, S: SparsityPattern, a: float) -> BoundReport:
    """Check ||U Pi||_F^2 >= (1 - (1+a)^2 |S|/n) ||U||_F^2 for U in the cone
    sum_{i not in S} ||u_i|| <= a sum_{i in S} ||u_i||."""
    U = as_matrix(U, "U")
    n = U.shape[1]
    if S.n != n:
        raise ValidationError(f"pattern is for n={S.n}, U has n={n}")
    if not a > 0:
        raise ValidationError("a must be positive")
    if not cone_condition_holds(U, S, a):
        raise ValidationError("U violates the cone condition")
    fro2 = float(np.sum(U * U))
    centered = U - U.mean(axis=1, keepdims=True)
    lhs = float(np.sum(centered * centered))
    rhs = (1 - (1 + a) ** 2 * len(S) / n) * fro2
    return _report(rhs, lhs, 1, slack=1e-9 * max(fro2, 1e-300), kind=LOWER)


class Envelope(NamedTuple):
    value: float
    applicable: bool


def recursion_envelope(eps0: float, s: int, n: int, p: int, a: float, k: int) -> Envelope:
    """Bound max(sqrt(p) (33 s / n)^(2 (1 - 2^-k)), 2a) on the k-th IST error
    level.  `applicable` is False when eps0^2 <= p, n >= 33 s and
    a <= sqrt(p)/2 do not all hold; the value is still returned."""
    if k < 0:
        raise ValidationError("k must be nonnegative")
    applicable = eps0 * eps0 <= p and n >= 33 * s and a <= 0.5 * math.sqrt(p)
    ratio = (33.0 * s / n) ** 2
    value = max(math.sqrt(p) * ratio ** (1.0 - 0.5**k), 2 * a)
    return Envelope(value, applicable)


def prox_grouplasso_numeric(Z, lam: float, tol: float = 1e-10) -> np.ndarray:
    """Minimize ||Z - t||^2 + lam ||t|| numerically.

    The minimizer lies on the segment from 0 to Z, so the search is a
    bounded 1-D minimization over the length r of t = r Z/||Z||.
    """
    Z = np.asarray(Z, dtype=float)
    z = float(np.linalg.norm(Z))
    if z == 0.0:
        return np.zeros_like(Z)

    def f(r):
        return (z - r) ** 2 + lam * r

    # f is convex, so a nonnegative slope at 0 makes 0 the minimizer
    if lam - 2 * z >= 0:
        return np.zeros_like(Z)
    res = minimize_scalar(f, bounds=(0.0, z), method="bounded", options={"xatol": tol})
    r = min((0.0, z, float(res.x)), key=f)
    return Z * (r / z)


GSS_BRUTEFORCE_MAX_N = 14


def gss_bruteforce(Y, sigma: float, lam: float) -> tuple[np.ndarray, SparsityPattern]:
    """Greedy subset selection by full enumeration of every subset.

    Column sums of all 2^n subsets are tabulated once; each round then
    takes the smallest passing subset of the remaining columns, ties broken
    by the lexicographic order of the sorted index tuples.
    """
    Y = as_matrix(Y, "Y")
    p, n = Y.shape
    if n > GSS_BRUTEFORCE_MAX_N:
        raise ValidationError(f"gss_bruteforce supports n <= {GSS_BRUTEFORCE_MAX_N}, got {n}")
    size = 1 << n
    sums = np.zeros((size, p))
    card = np.zeros(size, dtype=np.int64)
    for mask in range(1, size):
        low = mask & -mask
        j = low.bit_length() - 1
        sums[mask] = sums[mask ^ low] + Y[:, j]
        card[mask] = card[mask ^ low] + 1
    sq = np.sum(sums * sums, axis=1)
    thr = 12 * sigma**2 * (card * p + lam * card.astype(float) ** 2)
    passing = sq >= thr
    passing[0] = False
    masks = np.arange(size)

    remaining = size - 1
    chosen: list[int] = []
    while remaining:
        cand = masks[passing & ((masks & ~remaining) == 0)]
        if cand.size == 0:
            break
        kmin = card[cand].min()
        best = min(tuple(i for i in range(n) if m >> i & 1) for m in cand[card[cand] == kmin])
        chosen.extend(best)
        for i in best:
            remaining &= ~(1 << i)
    idx = sorted(chosen)
    est = Y[:, idx].sum(axis=1) if idx else np.zeros(p)
    return est, SparsityPattern(n, tuple(idx))


# -- Monte Carlo verification of the lemmas ---------------------------------

def _binom_slack(prob: float, trials: int) -> float:
    prob = min(max(prob, 0.0), 1.0)
    return 3 * math.sqrt(prob * (1 - prob) / trials)


def mc_chi2_tail(d: int, x: float, trials: int, rng: np.random.Generator) -> BoundReport:
    b = chi2_tail_bound(d, x)
    eta = rng.chisquare(d, size=trials)
    return _report(b, np.mean(eta >= d + x), trials, _binom_slack(b, trials))


def mc_chi2_truncated_mean(d: int, x: float, trials: int, rng: np.random.Generator) -> BoundReport:
    b = chi2_truncated_mean_bound(d, x)
    eta = rng.chisquare(d, size=trials)
    v = eta * (eta >= d + x)
    return _report(b, v.mean(), trials, 3 * v.std(ddof=1) / math.sqrt(trials))


def mc_centered_column_norm(p: int, n: int, delta: float, trials: int,
                            rng: np.random.Generator) -> BoundReport:
    """Empirical rate at which max_i ||(Xi Pi)_i||^2 exceeds its bound."""
    b = centered_column_norm_bound(p, n, delta)
    hits = 0
    for _ in range(trials):
        Xi = rng.standard_normal((p, n))
        C = Xi - Xi.mean(axis=1, keepdims=True)
        hits += np.max(np.sum(C * C, axis=0)) > b
    return _report(delta, hits / trials, trials, _binom_slack(delta, trials))


def _spectral_norms(N: int, n: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    A = rng.standard_normal((trials, N, n))
    return np.linalg.norm(A, ord=2, axis=(1, 2))


def mc_gaussian_norm_expectation(N: int, n: int, trials: int, rng: np.random.Generator) -> BoundReport:
    sq = _spectral_norms(N, n, trials, rng) ** 2
    b = gaussian_matrix_norm_bounds(N, n, 0.0).expectation_sq_bound
    return _report(b, sq.mean(), trials, 3 * sq.std(ddof=1) / math.sqrt(trials))


def mc_gaussian_norm_deviation(N: int, n: int, t: float, trials: int,
                               rng: np.random.Generator) -> BoundReport:
    bounds = gaussian_matrix_norm_bounds(N, n, t)
    norms = _spectral_norms(N, n, trials, rng)
    fp = min(bounds.failure_probability, 1.0)
    return _report(fp, np.mean(norms > bounds.deviation_bound), trials, _binom_slack(fp, trials))


def random_cone_matrix(p: int, n: int, S: SparsityPattern, a: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Gaussian p x n matrix with heterogeneous column scales, off-support
    columns rescaled so that the cone condition holds (often with equality)."""
    U = rng.standard_normal((p, n)) * rng.exponential(1.0, size=n)
    mask = S.mask()
    norms = np.linalg.norm(U, axis=0)
    off, on = norms[~mask].sum(), norms[mask].sum()
    budget = a * on * (1.0 if rng.random() < 0.5 else rng.random())
    if off > 0:
        U[:, ~mask] *= budget / off * (1 - 1e-12)
    return U


def mc_projection_cone(p: int, n: int, s: int, a: float, trials: int,
                       rng: np.random.Generator) -> BoundReport:
    """Worst margin of the projection lemma over random cone matrices.

    Reports the smallest ratio ||U Pi||_F^2 / ||U||_F^2 seen against the
    lemma's lower bound 1 - (1+a)^2 s/n.
    """
    worst = math.inf
    for _ in range(trials):
        idx = rng.choice(n, size=s, replace=False)
        S = SparsityPattern(n, tuple(idx.tolist()))
        U = random_cone_matrix(p, n, S, a, rng)
        rep = projection_cone_check(U, S, a)
        if not rep.holds:
            return _report(1 - (1 + a) ** 2 * s / n, rep.empirical_value / max(np.sum(U * U), 1e-300),
                           trials, kind=LOWER)
        worst = min(worst, rep.empirical_value / np.sum(U * U))
    return _report(1 - (1 + a) ** 2 * s / n, worst, trials, slack=1e-9, kind=LOWER)


def verify_suite(trials: int = 2000, seed: int = 20180101) -> list[tuple[str, BoundReport]]:
    """Run every lemma check with `trials` Monte Carlo draws each."""
    ss = np.random.SeedSequence(seed)
    rngs = iter(np.random.default_rng(c) for c in ss.spawn(32))
    out = []
    for d, x in [(1, 0.5), (4, 4), (1, 8), (10, 5), (10, 40), (50, 30)]:
        out.append((f"chi2_tail d={d} x={x:g}", mc_chi2_tail(d, x, trials, next(rngs))))
    for d, x in [(2, 1), (2, 10), (10, 10), (10, 45), (40, 20)]:
        out.append((f"chi2_truncated_mean d={d} x={x:g}", mc_chi2_truncated_mean(d, x, trials, next(rngs))))
    for p, n, delta in [(10, 100, 0.1), (2, 50, 0.5), (50, 20, 0.3)]:
        out.append((f"centered_column_norm p={p} n={n} delta={delta:g}",
                    mc_centered_column_norm(p, n, delta, trials, next(rngs))))
    for N, n in [(4, 4), (10, 3), (30, 30)]:
        out.append((f"gaussian_norm_expectation N={N} n={n}",
                    mc_gaussian_norm_expectation(N, n, trials, next(rngs))))
    for N, n, t in [(4, 4, 1.0), (20, 10, 1.5), (10, 10, 2.0)]:
        out.append((f"gaussian_norm_deviation N={N} n={n} t={t:g}",
                    mc_gaussian_norm_deviation(N, n, t, trials, next(rngs))))
    for p, n, s, a in [(5, 32, 1, 3.0), (8, 64, 2, 3.0), (3, 20, 2, 1.0)]:
        out.append((f"projection_cone p={p} n={n} s={s} a={a:g}",
                    mc_projection_cone(p, n, s, a, trials, next(rngs))))
    return out
