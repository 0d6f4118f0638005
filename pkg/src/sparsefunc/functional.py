"""Estimators of the column sum L(Theta) from Y = Theta + sigma * Xi.

All estimators return an `EstimateResult` whose `estimate` has length p.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, islice
from typing import Optional

import numpy as np

from .core import (
    EstimateResult,
    SparsityPattern,
    ValidationError,
    as_matrix,
    check_delta,
    check_sigma,
    column_norms,
    sum_columns,
)

S_KNOWN = "s-known"
S_FREE = "s-free"

GSS_DEFAULT_MAX_CAP = 12
# enumeration above these sizes needs an explicit search budget
GSS_GUARD_CAP = 20
GSS_GUARD_N = 30
_GSS_BATCH = 1 << 15


def gss_lambda(n: int, delta: float) -> float:
    return 1.5 * math.log(2 * n / check_delta(delta))


@dataclass
class GssConfig:
    sigma: float
    delta: float = 0.1
    cardinality_cap: Optional[int] = None
    lambda_override: Optional[float] = None
    search_budget: bool = False

    def resolve(self, n: int) -> tuple[float, int]:
        check_sigma(self.sigma)
        cap = min(n, GSS_DEFAULT_MAX_CAP) if self.cardinality_cap is None else int(self.cardinality_cap)
        if cap < 1:
            raise ValidationError("cardinality_cap must be >= 1")
        if cap > n:
            raise ValidationError(f"cardinality_cap={cap} exceeds n={n}")
        if cap > GSS_GUARD_CAP and n > GSS_GUARD_N and not self.search_budget:
            raise ValidationError(
                f"cardinality_cap={cap} with n={n} is a combinatorial search; "
                "set search_budget=True to allow it"
            )
        if self.lambda_override is not None:
            lam = float(self.lambda_override)
            if lam <= 0:
                raise ValidationError("lambda_override must be positive")
        else:
            lam = gss_lambda(n, self.delta)
        return lam, cap


@dataclass
class ThresholdConfig:
    sigma: float
    sparsity: Optional[int] = None
    mode: str = S_KNOWN

    def effective_s(self) -> int:
        if self.mode == S_FREE:
            return 1
        if self.mode != S_KNOWN:
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.sparsity is None or self.sparsity < 1:
            raise ValidationError("s-known mode needs a positive sparsity")
        return int(self.sparsity)


def naive_estimate(Y) -> EstimateResult:
    Y = as_matrix(Y, "Y")
    return EstimateResult(Y.sum(axis=1), SparsityPattern.full(Y.shape[1]))


def oracle_estimate(Y, S: SparsityPattern) -> EstimateResult:
    Y = as_matrix(Y, "Y")
    if S.n != Y.shape[1]:
        raise ValidationError(f"pattern is for n={S.n}, Y has n={Y.shape[1]}")
    return EstimateResult(sum_columns(Y, S.indices), S)


# -- greedy subset selection ------------------------------------------------

def _first_passing_subset(Y, active, k, thr):
    """Lexicographically first k-subset of `active` whose column sum has
    squared norm >= thr, or None."""
    sub = Y[:, active]
    it = combinations(range(len(active)), k)
    while True:
        batch = list(islice(it, _GSS_BATCH))
        if not batch:
            return None
        combos = np.array(batch, dtype=np.intp)
        sums = sub[:, combos].sum(axis=2)
        hits = np.flatnonzero(np.einsum("ij,ij->j", sums, sums) >= thr)
        if hits.size:
            return [active[j] for j in combos[hits[0]]]


def gss_estimate(Y, cfg: GssConfig) -> EstimateResult:
    """Greedy subset selection.

    Each round picks, among subsets J of the remaining columns with
    ||L(Y_J)||^2 >= 12 sigma^2 (|J| p + lambda |J|^2), one of minimum
    cardinality (lexicographically first), removes it and repeats until no
    subset passes or no column remains.  Subsets larger than the
    cardinality cap are not searched; the result is flagged when that
    restriction may have mattered.
    """
    Y = as_matrix(Y, "Y")
    p, n = Y.shape
    lam, cap = cfg.resolve(n)
    sigma2 = cfg.sigma ** 2

    active = list(range(n))
    selected: list[int] = []
    rounds = 0
    warnings: list[str] = []
    while active:
        rounds += 1
        chosen = None
        for k in range(1, min(cap, len(active)) + 1):
            chosen = _first_passing_subset(Y, active, k, 12.0 * sigma2 * (k * p + lam * k * k))
            if chosen is not None:
                break
        if chosen is None:
            if cap < len(active):
                warnings.append("gss_cap_binding")
            break
        selected.extend(chosen)
        taken = set(chosen)
        active = [i for i in active if i not in taken]

    S_hat = SparsityPattern(n, tuple(selected))
    return EstimateResult(
        sum_columns(Y, S_hat.indices), S_hat, rounds, warnings,
        {"lambda": lam, "cardinality_cap": cap},
    )


def adgss_radii(p: int, n: int, s: int, sigma: float, delta: float) -> tuple[float, float]:
    """Radii (r1, r2) of the confidence balls around L(Y) and the GSS
    estimate used by the adaptive selector."""
    lam = 1.5 * math.log(4 * n / delta)
    r1 = sigma * math.sqrt(2 * n * p + 3 * n * math.log(2 / delta))
    r2 = sigma * math.sqrt(60 * s * (p + lam * s))
    return r1, r2


def adgss_estimate(Y, sigma: float, delta: float, cardinality_cap: Optional[int] = None,
                   search_budget: bool = False) -> EstimateResult:
    """Adaptive choice between the GSS estimate and the naive sum.

    GSS is run at lambda = 1.5 log(4n/delta).  The smallest sparsity level
    k compatible with the distance between the two estimates decides which
    one is returned; `info["branch"]` is "gss" or "naive".
    """
    Y = as_matrix(Y, "Y")
    sigma = check_sigma(sigma)
    delta = check_delta(delta)
    p, n = Y.shape
    lam = 1.5 * math.log(4 * n / delta)
    gss = gss_estimate(Y, GssConfig(sigma, delta, cardinality_cap, lam, search_budget))
    naive = Y.sum(axis=1)

    dist = float(np.linalg.norm(gss.estimate - naive)) / sigma
    r1_unit = math.sqrt(n * (2 * p + 3 * math.log(2 / delta)))
    s_hat = n
    for k in range(1, n + 1):
        if dist <= math.sqrt(60 * k * (p + lam * k)) + r1_unit:
            s_hat = k
            break

    use_gss = 60 * s_hat * (p + lam * s_hat) <= 2 * n * p + 3 * n * math.log(2 / delta)
    info = {"branch": "gss" if use_gss else "naive", "s_hat": s_hat, "dist": dist, "lambda": lam}
    if use_gss:
        return EstimateResult(gss.estimate, gss.support, gss.iterations, list(gss.warnings), info)
    return EstimateResult(naive, SparsityPattern.full(n), gss.iterations, list(gss.warnings), info)


# -- group thresholding -----------------------------------------------------

def _rate_term(p: int, n: int, s: int) -> float:
    return max(math.log1p(n / s**2), math.sqrt(p) * math.sqrt(math.log1p(n**2 * p / s**4)))


def ght_threshold(cfg: ThresholdConfig, p: int, n: int) -> float:
    s = cfg.effective_s()
    return check_sigma(cfg.sigma) * math.sqrt(p + 4 * _rate_term(p, n, s))


def ght_estimate(Y, lam: float) -> EstimateResult:
    """Keep whole columns with ||Y_i|| >= lam, drop the rest."""
    Y = as_matrix(Y, "Y")
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    keep = column_norms(Y) >= lam
    return EstimateResult(Y[:, keep].sum(axis=1), SparsityPattern.from_mask(keep))


def gst_gamma(cfg: ThresholdConfig, p: int, n: int) -> float:
    return 2.0 * math.sqrt(_rate_term(p, n, cfg.effective_s()))


def gst_weights(Y: np.ndarray, sigma: float, gamma: float) -> np.ndarray:
    p = Y.shape[0]
    excess = np.sum(Y * Y, axis=0) - sigma**2 * p
    w = np.zeros(Y.shape[1])
    live = excess > 0
    w[live] = np.maximum(1.0 - sigma * gamma / np.sqrt(excess[live]), 0.0)
    return w


def gst_estimate(Y, sigma: float, gamma: float) -> EstimateResult:
    """Group soft thresholding with the data-dependent per-column level.

    Column i is scaled by (1 - sigma*gamma / sqrt(||Y_i||^2 - sigma^2 p))_+
    and dropped outright when ||Y_i||^2 <= sigma^2 p.
    """
    Y = as_matrix(Y, "Y")
    sigma = check_sigma(sigma)
    if gamma < 0:
        raise ValidationError("gamma must be nonnegative")
    w = gst_weights(Y, sigma, gamma)
    return EstimateResult(Y @ w, SparsityPattern.from_mask(w > 0), info={"weights": w})


def gst_penalties(Y, sigma: float, gamma: float) -> np.ndarray:
    """Per-column penalty levels lambda_i that make the group-lasso prox
    coincide with `gst_estimate` (inf where ||Y_i||^2 <= sigma^2 p)."""
    Y = as_matrix(Y, "Y")
    p = Y.shape[0]
    norms = column_norms(Y)
    excess = norms**2 - sigma**2 * p
    out = np.full(Y.shape[1], np.inf)
    live = excess > 0
    out[live] = 2 * sigma * gamma * norms[live] / np.sqrt(excess[live])
    return out


# -- element-wise hard thresholding -----------------------------------------

def ewht_threshold(sigma: float, n: int, s: int) -> float:
    if s < 1:
        raise ValidationError("s must be >= 1")
    return check_sigma(sigma) * math.sqrt(2 * math.log1p(n / s**2))


def ewht_estimate(Y, lam: float, two_sided: bool = False) -> EstimateResult:
    """Row sums of the entries exceeding lam.

    The default keeps Y_ij > lam only (one-sided); `two_sided=True` keeps
    |Y_ij| > lam instead.
    """
    Y = as_matrix(Y, "Y")
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    keep = (np.abs(Y) if two_sided else Y) > lam
    return EstimateResult(np.where(keep, Y, 0.0).sum(axis=1), None)
