"""Matrix primitives and shared result types.

A "matrix" throughout the package is a 2-D float64 numpy array of shape
(p, n) whose columns are the observed p-dimensional vectors.  Column indices
are 0-based in code and 1-based in anything printed for a human.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


def as_matrix(M, name: str = "M") -> np.ndarray:
    """Validate `M` and return it as a column-major float64 (p, n) array."""
    A = np.asarray(M, dtype=np.float64)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {A.shape}")
    p, n = A.shape
    if p < 1 or n < 1:
        raise ValidationError(f"{name} must have p >= 1 and n >= 1, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError(f"{name} has non-finite entries")
    return np.asfortranarray(A)


def check_sigma(sigma: float) -> float:
    sigma = float(sigma)
    if not (sigma > 0 and np.isfinite(sigma)):
        raise ValidationError(f"sigma must be positive, got {sigma}")
    return sigma


def check_delta(delta: float) -> float:
    delta = float(delta)
    if not 0 < delta < 1:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    return delta


@dataclass(frozen=True)
class SparsityPattern:
    """A set of column indices of an n-column matrix (0-based, sorted)."""

    n: int
    indices: tuple[int, ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"n must be positive, got {self.n}")
        idx = tuple(sorted(int(i) for i in self.indices))
        if len(set(idx)) != len(idx):
            raise ValidationError("duplicate indices in sparsity pattern")
        if idx and (idx[0] < 0 or idx[-1] >= self.n):
            raise ValidationError(f"indices out of range for n={self.n}: {idx}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def full(cls, n: int) -> "SparsityPattern":
        return cls(n, tuple(range(n)))

    @classmethod
    def from_mask(cls, mask) -> "SparsityPattern":
        mask = np.asarray(mask, dtype=bool)
        return cls(mask.size, tuple(np.flatnonzero(mask).tolist()))

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i) -> bool:
        return i in self.indices

    def mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[list(self.indices)] = True
        return m

    def one_based(self) -> list[int]:
        return [i + 1 for i in self.indices]


@dataclass(frozen=True)
class NoiseModel:
    sigma: float

    def __post_init__(self):
        check_sigma(self.sigma)


@dataclass
class EstimateResult:
    """Output of an estimator.

    `support` is None for estimators that do not select columns.
    `info` carries estimator-specific diagnostics (e.g. which adaptive
    branch fired).
    """

    estimate: np.ndarray
    support: Optional[SparsityPattern] = None
    iterations: int = 0
    warnings: list[str] = field(default_factory=list)
    info: dict = field(default_factory=dict)


def linear_functional(M) -> np.ndarray:
    """Sum of the columns of M."""
    return as_matrix(M).sum(axis=1)


def normalized_functional(M) -> np.ndarray:
    """Average of the columns of M."""
    A = as_matrix(M)
    return A.sum(axis=1) / A.shape[1]


def center_columns(M) -> np.ndarray:
    """Subtract the column average from every column (right-multiply by Pi)."""
    A = as_matrix(M)
    if A.shape[1] < 2:
        raise ValidationError("center_columns needs n >= 2; with n = 1 the projection is degenerate")
    return np.asfortranarray(A - A.mean(axis=1, keepdims=True))


def column_norms(M) -> np.ndarray:
    return np.linalg.norm(as_matrix(M), axis=0)


def sum_columns(M: np.ndarray, idx: Iterable[int]) -> np.ndarray:
    """Sum of the columns of M listed in `idx` (zero vector when empty)."""
    idx = list(idx)
    if not idx:
        return np.zeros(M.shape[0])
    return M[:, idx].sum(axis=1)
