"""Seeded instance generation and Monte Carlo risk estimation.

Every trial draws from its own generator, seeded by the pair
(master_seed, trial_index) through numpy's SeedSequence and PCG64, so
results do not depend on how trials are scheduled across threads.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from . import functional as fn
from . import robust as rb
from .core import SparsityPattern, ValidationError, as_matrix, check_delta, check_sigma

GENERATOR = "numpy.random.PCG64 via SeedSequence([master_seed, trial_index])"

SIGNAL_KINDS = ("zero", "constant-eps", "spherical", "worst-case-quartic", "custom-matrix")
FUNCTIONAL_ESTIMATORS = ("naive", "oracle", "gss", "adgss", "ght", "gst", "ewht")
ROBUST_ESTIMATORS = ("mean", "median", "group-lasso", "ist")
AUTO_BOUND = ("gss", "adgss", "group-lasso")


class ConfigError(ValidationError):
    """Malformed experiment configuration; message names the field."""


@dataclass
class SignalSpec:
    """How the mean matrix Theta is built.

    constant-eps puts `magnitude` in every entry of a support column;
    spherical draws each support column uniformly on the sphere of radius
    `magnitude`; worst-case-quartic sets every support entry to
    sigma * p^(-1/4) (magnitude unused).  support_size defaults to the
    experiment's s.  Support columns are scattered by a seeded permutation
    unless first_columns is set, in which case they are the first columns.
    """

    kind: str = "zero"
    magnitude: float = 0.0
    support_size: Optional[int] = None
    first_columns: bool = False
    matrix: Optional[list] = None

    def validate(self):
        if self.kind not in SIGNAL_KINDS:
            raise ConfigError(f"signal.kind: unknown kind {self.kind!r}; expected one of {SIGNAL_KINDS}")
        if self.magnitude < 0:
            raise ConfigError("signal.magnitude: must be nonnegative")
        if self.kind == "custom-matrix" and self.matrix is None:
            raise ConfigError("signal.matrix: required for kind 'custom-matrix'")


@dataclass
class EstimatorConfig:
    """One estimator and its tuning.

    Unset fields fall back to the experiment (sigma, delta, s) or to the
    theoretical tuning rule of the estimator.  `bound` is a number, "auto"
    (the estimator's own deviation bound) or None.
    """

    id: str
    label: Optional[str] = None
    mode: str = fn.S_KNOWN
    sparsity: Optional[int] = None
    delta: Optional[float] = None
    cap: Optional[int] = None
    lam: Optional[float] = None
    gamma: Optional[float] = None
    two_sided: bool = False
    iterations: int = 4
    tol: float = 1e-10
    max_iter: int = 10_000
    search_budget: bool = False
    bound: Union[None, float, str] = None

    @property
    def name(self) -> str:
        return self.label or self.id


@dataclass
class ExperimentSpec:
    p: int
    n: int
    s: int
    sigma: float = 1.0
    delta: float = 0.1
    signal: SignalSpec = field(default_factory=SignalSpec)
    mu: Optional[list] = None
    estimators: list = field(default_factory=list)
    trials: int = 100
    master_seed: int = 0

    @property
    def robust(self) -> bool:
        return self.mu is not None

    def validate(self) -> "ExperimentSpec":
        for key in ("p", "n", "trials"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key}: must be a positive integer")
        if not 0 <= self.s <= self.n:
            raise ConfigError(f"s: must lie in [0, n={self.n}]")
        try:
            check_sigma(self.sigma)
        except ValidationError as e:
            raise ConfigError(f"sigma: {e}") from None
        try:
            check_delta(self.delta)
        except ValidationError as e:
            raise ConfigError(f"delta: {e}") from None
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed: must be an unsigned 64-bit integer")
        self.signal.validate()
        k = self.support_size
        if not 0 <= k <= self.n:
            raise ConfigError(f"signal.support_size: must lie in [0, n={self.n}]")
        if self.mu is not None and len(self.mu) != self.p:
            raise ConfigError(f"mu: expected length p={self.p}, got {len(self.mu)}")
        allowed = ROBUST_ESTIMATORS if self.robust else FUNCTIONAL_ESTIMATORS
        for i, est in enumerate(self.estimators):
            if est.id not in allowed:
                model = "robust (mu given)" if self.robust else "functional (no mu)"
                raise ConfigError(f"estimators[{i}].id: {est.id!r} is not a {model} estimator; "
                                  f"expected one of {allowed}")
            if est.bound == "auto" and est.id not in AUTO_BOUND:
                raise ConfigError(f"estimators[{i}].bound: no built-in deviation bound for {est.id!r}")
        return self

    @property
    def support_size(self) -> int:
        return self.s if self.signal.support_size is None else int(self.signal.support_size)


@dataclass
class RiskReport:
    estimator_id: str
    p: int
    n: int
    s: int
    sigma: float
    mean_sq_error: float
    std_error: float
    deviation_bound: Optional[float]
    violation_rate: Optional[float]
    trials: int
    wall_time_ms: int
    warnings: dict = field(default_factory=dict)


# -- instances --------------------------------------------------------------

def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(master_seed), int(trial_index)])))


def gen_functional_instance(spec: ExperimentSpec, trial_index: int):
    """Draw (Y, Theta, S) with Y = Theta + sigma * Xi."""
    rng = trial_rng(spec.master_seed, trial_index)
    p, n, sigma = spec.p, spec.n, spec.sigma
    sig = spec.signal
    k = spec.support_size

    if sig.kind == "custom-matrix":
        Theta = as_matrix(sig.matrix, "signal.matrix")
        if Theta.shape != (p, n):
            raise ConfigError(f"signal.matrix: expected shape ({p}, {n}), got {Theta.shape}")
        S = SparsityPattern.from_mask(np.any(Theta != 0, axis=0))
    else:
        block = np.zeros((p, k))
        if sig.kind == "constant-eps":
            block[:] = sig.magnitude
        elif sig.kind == "spherical" and k:
            g = rng.standard_normal((p, k))
            block = g / np.linalg.norm(g, axis=0) * sig.magnitude
        elif sig.kind == "worst-case-quartic":
            block[:] = sigma * p ** -0.25
        if sig.first_columns:
            pos = np.arange(k)
        else:
            pos = rng.permutation(n)[:k]
        Theta = np.zeros((p, n))
        Theta[:, pos] = block
        S = SparsityPattern(n, () if sig.kind == "zero" else tuple(pos.tolist()))

    Y = Theta + sigma * rng.standard_normal((p, n))
    return np.asfortranarray(Y), np.asfortranarray(Theta), S


def gen_robust_instance(spec: ExperimentSpec, trial_index: int):
    """Draw (Y, mu, Theta, S) with Y = mu 1^T + Theta + sigma * Xi."""
    if spec.mu is None:
        raise ConfigError("mu: required for robust instances")
    Y, Theta, S = gen_functional_instance(spec, trial_index)
    mu = np.asarray(spec.mu, dtype=float)
    return np.asfortranarray(Y + mu[:, None]), mu, Theta, S


# -- estimator dispatch -----------------------------------------------------

def _sparsity(est: EstimatorConfig, spec: ExperimentSpec) -> int:
    return spec.s if est.sparsity is None else int(est.sparsity)


def _delta(est: EstimatorConfig, spec: ExperimentSpec) -> float:
    return spec.delta if est.delta is None else float(est.delta)


def resolve_bound(est: EstimatorConfig, spec: ExperimentSpec) -> Optional[float]:
    """Squared-error deviation bound configured for `est`, if any."""
    if est.bound is None:
        return None
    if est.bound != "auto":
        return float(est.bound)
    p, n, sigma = spec.p, spec.n, spec.sigma
    s, delta = _sparsity(est, spec), _delta(est, spec)
    if est.id == "gss":
        lam = est.lam if est.lam is not None else fn.gss_lambda(n, delta)
        return 60 * sigma**2 * s * (p + lam * s)
    if est.id == "adgss":
        r1, r2 = fn.adgss_radii(p, n, s, sigma, delta)
        return (3 * min(r1, r2)) ** 2
    if est.id == "group-lasso":
        lam = est.lam if est.lam is not None else rb.group_lasso_lambda(sigma, p, n, delta)
        return rb.group_lasso_bounds(lam, sigma, p, n, s, delta)[2]
    raise ConfigError(f"bound: no built-in deviation bound for {est.id!r}")


def apply_functional(est: EstimatorConfig, spec: ExperimentSpec, Y: np.ndarray,
                     S: Optional[SparsityPattern] = None):
    p, n, sigma = spec.p, spec.n, spec.sigma
    delta = _delta(est, spec)
    tcfg = fn.ThresholdConfig(sigma, _sparsity(est, spec), est.mode)
    if est.id == "naive":
        return fn.naive_estimate(Y)
    if est.id == "oracle":
        if S is None:
            raise ConfigError("oracle estimator needs the true support")
        return fn.oracle_estimate(Y, S)
    if est.id == "gss":
        return fn.gss_estimate(Y, fn.GssConfig(sigma, delta, est.cap, est.lam, est.search_budget))
    if est.id == "adgss":
        return fn.adgss_estimate(Y, sigma, delta, est.cap, est.search_budget)
    if est.id == "ght":
        lam = est.lam if est.lam is not None else fn.ght_threshold(tcfg, p, n)
        return fn.ght_estimate(Y, lam)
    if est.id == "gst":
        gamma = est.gamma if est.gamma is not None else fn.gst_gamma(tcfg, p, n)
        return fn.gst_estimate(Y, sigma, gamma)
    if est.id == "ewht":
        s_eff = tcfg.effective_s()
        lam = est.lam if est.lam is not None else fn.ewht_threshold(sigma, n, s_eff)
        return fn.ewht_estimate(Y, lam, est.two_sided)
    raise ConfigError(f"unknown functional estimator {est.id!r}")


def apply_robust(est: EstimatorConfig, spec: ExperimentSpec, Y: np.ndarray):
    """Return (mu_hat, warnings) for a robust estimator."""
    if est.id == "mean":
        return rb.sample_mean(Y), []
    if est.id == "median":
        return rb.coordinatewise_median(Y), []
    view = rb.RobustInstanceView(Y, spec.sigma, _sparsity(est, spec), _delta(est, spec))
    if est.id == "group-lasso":
        lam = est.lam if est.lam is not None else rb.group_lasso_lambda(spec.sigma, spec.p, spec.n, view.delta)
        res = rb.group_lasso_fit(view, lam, est.tol, est.max_iter)
        warns = list(view.warnings) + ([] if res.converged else [rb.WARN_NOT_CONVERGED])
        return res.mu_hat, warns
    if est.id == "ist":
        _, mu_res, _ = rb.ist_estimate(view, est.iterations, est.tol, est.max_iter)
        return mu_res.estimate, list(mu_res.warnings)
    raise ConfigError(f"unknown robust estimator {est.id!r}")


# -- Monte Carlo ------------------------------------------------------------

class _Running:
    """Welford mean/variance, fed in trial order."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.violations = 0
        self.elapsed = 0.0
        self.warnings: dict[str, int] = {}

    def push(self, x: float, violated: bool, elapsed: float, warns):
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)
        self.violations += bool(violated)
        self.elapsed += elapsed
        for w in warns:
            self.warnings[w] = self.warnings.get(w, 0) + 1

    @property
    def std_error(self) -> float:
        if self.count < 2:
            return 0.0
        return math.sqrt(self.m2 / (self.count - 1) / self.count)


def _run_trial(spec: ExperimentSpec, bounds, t: int):
    out = []
    if spec.robust:
        Y, mu, Theta, S = gen_robust_instance(spec, t)
        for est, b in zip(spec.estimators, bounds):
            t0 = time.perf_counter()
            mu_hat, warns = apply_robust(est, spec, Y)
            dt = time.perf_counter() - t0
            err = float(np.sum((mu_hat - mu) ** 2))
            out.append((err, b is not None and err > b, dt, warns))
    else:
        Y, Theta, S = gen_functional_instance(spec, t)
        target = Theta.sum(axis=1)
        for est, b in zip(spec.estimators, bounds):
            t0 = time.perf_counter()
            res = apply_functional(est, spec, Y, S)
            dt = time.perf_counter() - t0
            err = float(np.sum((res.estimate - target) ** 2))
            out.append((err, b is not None and err > b, dt, res.warnings))
    return out


def mc_risk(spec: ExperimentSpec, threads: int = 1) -> list[RiskReport]:
    """Monte Carlo squared-error risk of every configured estimator.

    All estimators see the same instances.  Per-trial results are folded
    into the running statistics strictly in trial order, so the output does
    not depend on `threads`.
    """
    spec.validate()
    bounds = [resolve_bound(e, spec) for e in spec.estimators]
    acc = [_Running() for _ in spec.estimators]

    def work(t):
        return _run_trial(spec, bounds, t)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = ex.map(work, range(spec.trials))
            for per_trial in results:
                for a, r in zip(acc, per_trial):
                    a.push(*r)
    else:
        for t in range(spec.trials):
            for a, r in zip(acc, work(t)):
                a.push(*r)

    return [
        RiskReport(
            est.name, spec.p, spec.n, spec.s, spec.sigma, a.mean, a.std_error, b,
            None if b is None else a.violations / a.count, a.count,
            int(round(a.elapsed * 1000)), dict(sorted(a.warnings.items())),
        )
        for est, a, b in zip(spec.estimators, acc, bounds)
    ]


SWEEP_AXES = ("p", "n", "s")


def rate_sweep(base: ExperimentSpec, axis: str, values, threads: int = 1) -> list[RiskReport]:
    """mc_risk at each grid value of `axis` (rows grouped by value)."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis: must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    if values != sorted(values):
        raise ConfigError("values: must be sorted ascending")
    rows = []
    for v in values:
        spec = replace(base, **{axis: int(v)})
        if spec.mu is not None and axis == "p":
            if len(set(base.mu)) > 1:
                raise ConfigError("mu: must be a constant vector to sweep over p")
            spec = replace(spec, mu=[base.mu[0]] * int(v))
        rows.extend(mc_risk(spec, threads))
    return rows


def mse_ratios(rows: list[RiskReport], axis: str, numerator: str, denominator: str):
    """[(axis value, mse(numerator)/mse(denominator))] over the sweep."""
    by_key = {(getattr(r, axis), r.estimator_id): r.mean_sq_error for r in rows}
    vals = sorted({getattr(r, axis) for r in rows})
    return [(v, by_key[(v, numerator)] / by_key[(v, denominator)]) for v in vals]


def strictly_increasing(xs) -> bool:
    xs = list(xs)
    return all(b > a for a, b in zip(xs, xs[1:]))


# -- config files -----------------------------------------------------------

_EST_FIELDS = {f for f in EstimatorConfig.__dataclass_fields__}
_SIG_FIELDS = {f for f in SignalSpec.__dataclass_fields__}
_SPEC_FIELDS = {f for f in ExperimentSpec.__dataclass_fields__}
_EXTRA_FIELDS = {"axis", "values", "input", "generator"}


def _typed(d: dict, key: str, typ, where: str, default=None):
    v = d.get(key)
    if v is None:
        return default
    if typ is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{where}{key}: expected integer, got {v!r}")
    elif typ is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where}{key}: expected number, got {v!r}")
        v = float(v)
    elif typ is bool:
        if not isinstance(v, bool):
            raise ConfigError(f"{where}{key}: expected boolean, got {v!r}")
    elif typ is str:
        if not isinstance(v, str):
            raise ConfigError(f"{where}{key}: expected string, got {v!r}")
    return v


def parse_estimator(d: Any, where: str) -> EstimatorConfig:
    if isinstance(d, str):
        d = {"id": d}
    if not isinstance(d, dict) or "id" not in d:
        raise ConfigError(f"{where}: expected an object with an 'id' field")
    unknown = set(d) - _EST_FIELDS
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    bound = d.get("bound")
    if bound is not None and bound != "auto" and (isinstance(bound, bool) or not isinstance(bound, (int, float))):
        raise ConfigError(f"{where}.bound: expected number, 'auto' or null")
    mode = _typed(d, "mode", str, where + ".", fn.S_KNOWN)
    if mode not in (fn.S_KNOWN, fn.S_FREE):
        raise ConfigError(f"{where}.mode: expected 's-known' or 's-free'")
    return EstimatorConfig(
        id=_typed(d, "id", str, where + "."),
        label=_typed(d, "label", str, where + "."),
        mode=mode,
        sparsity=_typed(d, "sparsity", int, where + "."),
        delta=_typed(d, "delta", float, where + "."),
        cap=_typed(d, "cap", int, where + "."),
        lam=_typed(d, "lam", float, where + "."),
        gamma=_typed(d, "gamma", float, where + "."),
        two_sided=_typed(d, "two_sided", bool, where + ".", False),
        iterations=_typed(d, "iterations", int, where + ".", 4),
        tol=_typed(d, "tol", float, where + ".", 1e-10),
        max_iter=_typed(d, "max_iter", int, where + ".", 10_000),
        search_budget=_typed(d, "search_budget", bool, where + ".", False),
        bound=float(bound) if isinstance(bound, (int, float)) else bound,
    )


def parse_spec(d: Any) -> tuple[ExperimentSpec, dict]:
    """Build an ExperimentSpec from a decoded JSON object.

    Returns the spec and the remaining sweep/CLI keys (axis, values, ...).
    """
    if not isinstance(d, dict):
        raise ConfigError("<root>: expected a JSON object")
    unknown = set(d) - _SPEC_FIELDS - _EXTRA_FIELDS
    if unknown:
        raise ConfigError(f"<root>: unknown field(s) {sorted(unknown)}")
    for key in ("p", "n", "s"):
        if key not in d:
            raise ConfigError(f"{key}: required")
    sig = d.get("signal", {})
    if not isinstance(sig, dict):
        raise ConfigError("signal: expected an object")
    bad = set(sig) - _SIG_FIELDS
    if bad:
        raise ConfigError(f"signal: unknown field(s) {sorted(bad)}")
    signal = SignalSpec(
        kind=_typed(sig, "kind", str, "signal.", "zero"),
        magnitude=_typed(sig, "magnitude", float, "signal.", 0.0),
        support_size=_typed(sig, "support_size", int, "signal."),
        first_columns=_typed(sig, "first_columns", bool, "signal.", False),
        matrix=sig.get("matrix"),
    )
    ests = d.get("estimators", [])
    if not isinstance(ests, list):
        raise ConfigError("estimators: expected a list")
    mu = d.get("mu")
    if mu is not None:
        if not isinstance(mu, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in mu):
            raise ConfigError("mu: expected a list of numbers")
        mu = [float(v) for v in mu]
    spec = ExperimentSpec(
        p=_typed(d, "p", int, ""), n=_typed(d, "n", int, ""), s=_typed(d, "s", int, ""),
        sigma=_typed(d, "sigma", float, "", 1.0),
        delta=_typed(d, "delta", float, "", 0.1),
        signal=signal, mu=mu,
        estimators=[parse_estimator(e, f"estimators[{i}]") for i, e in enumerate(ests)],
        trials=_typed(d, "trials", int, "", 100),
        master_seed=_typed(d, "master_seed", int, "", 0),
    )
    extras = {k: d[k] for k in _EXTRA_FIELDS if k in d}
    return spec.validate(), extras


def load_spec(path) -> tuple[ExperimentSpec, dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    return parse_spec(d)


def spec_to_dict(spec: ExperimentSpec) -> dict:
    """Fully resolved spec (defaults filled in) as plain JSON data."""
    d = asdict(spec)
    d["generator"] = GENERATOR
    return d
