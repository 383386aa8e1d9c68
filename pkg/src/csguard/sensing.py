"""Secret sensing matrix and the affine consistency projection.

The secret matrix ``A`` (M x N, M = floor(cs_ratio * N)) is the recovery key.
Its pseudoinverse is never formed; ``A^+ r`` is evaluated as ``A^T w`` with
``(A A^T + jitter I) w = r`` solved against a cached Cholesky factor and
refined once against the exact Gram matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .rng import STREAM_MATRIX, STREAM_PERTURB, make_rng

JITTER = 1e-10
# A draw is rejected when its smallest Cholesky pivot (squared) falls below
# this fraction of the mean Gram diagonal.
RANK_TOL = 1e-8
ENCODED_LATENT = "encoded-latent"


class FactorizationError(np.linalg.LinAlgError):
    """The Gram matrix of a sensing matrix is numerically singular."""


class DimensionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SecretMatrix:
    entries: np.ndarray
    chol_gram: np.ndarray = field(repr=False)
    seed: int
    cs_ratio: float

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @classmethod
    def from_entries(cls, entries, seed: int = 0, cs_ratio: float | None = None) -> "SecretMatrix":
        entries = np.ascontiguousarray(entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] < 1 or entries.shape[0] > entries.shape[1]:
            raise DimensionError(f"sensing matrix must be M x N with 1 <= M <= N, got {entries.shape}")
        if cs_ratio is None:
            cs_ratio = entries.shape[0] / entries.shape[1]
        entries.setflags(write=False)
        chol = _factor_gram(entries)
        chol.setflags(write=False)
        return cls(entries=entries, chol_gram=chol, seed=int(seed), cs_ratio=float(cs_ratio))


@dataclass(frozen=True, eq=False)
class Observation:
    values: np.ndarray
    source_step: int | str = ENCODED_LATENT


@dataclass(frozen=True)
class JlReport:
    epsilon: float
    num_pairs: int
    max_distortion: float
    passed: bool


def _factor_gram(entries: np.ndarray) -> np.ndarray:
    gram = entries @ entries.T
    m = gram.shape[0]
    scale = np.trace(gram) / m
    gram[np.diag_indices(m)] += JITTER * scale
    try:
        chol = linalg.cholesky(gram, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("Gram matrix is not positive definite") from exc
    if not np.min(np.diag(chol)) ** 2 > RANK_TOL * scale:
        raise FactorizationError("sensing matrix is numerically rank deficient")
    return chol


def num_measurements(n: int, cs_ratio: float) -> int:
    return int(math.floor(cs_ratio * n))


def gaussian_entries(seed: int, m: int, n: int, *labels: int) -> np.ndarray:
    """i.i.d. N(0, 1/m) entries from the matrix stream of ``seed``."""
    rng = make_rng(seed, STREAM_MATRIX, *labels)
    return rng.standard_normal((m, n)) / math.sqrt(m)


def gen_secret_matrix(seed: int, n: int, cs_ratio: float) -> SecretMatrix:
    """Draw a JL-scaled Gaussian sensing matrix.

    Raises FactorizationError on a degenerate draw; see
    :func:`gen_secret_matrix_with_fallback` for the seed+1 retry rule.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not 0.0 < cs_ratio <= 1.0:
        raise ValueError(f"cs_ratio must lie in (0, 1], got {cs_ratio}")
    m = num_measurements(n, cs_ratio)
    if m < 1:
        raise ValueError(f"floor(cs_ratio * n) must be >= 1, got cs_ratio={cs_ratio}, n={n}")
    return SecretMatrix.from_entries(gaussian_entries(seed, m, n), seed=seed, cs_ratio=cs_ratio)


def gen_secret_matrix_with_fallback(seed: int, n: int, cs_ratio: float, max_tries: int = 8) -> SecretMatrix:
    for k in range(max_tries):
        try:
            return gen_secret_matrix(seed + k, n, cs_ratio)
        except FactorizationError:
            continue
    raise FactorizationError(f"no full-rank draw in seeds {seed}..{seed + max_tries - 1}")


def _check_latent(a: SecretMatrix, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != a.n:
        raise DimensionError(f"latent has length {z.shape[0]}, matrix expects {a.n}")
    return z


def _check_residual(a: SecretMatrix, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape[0] != a.m:
        raise DimensionError(f"residual has length {r.shape[0]}, matrix has {a.m} rows")
    return r


def _values(a: SecretMatrix, y) -> np.ndarray:
    return _check_residual(a, y.values if isinstance(y, Observation) else y)


def measure(a: SecretMatrix, z: np.ndarray, source_step: int | str = ENCODED_LATENT) -> Observation:
    return Observation(values=a.entries @ _check_latent(a, z), source_step=source_step)


def apply_pseudoinverse(a: SecretMatrix, r: np.ndarray) -> np.ndarray:
    r = _check_residual(a, r)
    w = linalg.cho_solve((a.chol_gram, True), r, check_finite=False)
    # one refinement step against the unjittered Gram removes the jitter bias
    w += linalg.cho_solve((a.chol_gram, True), r - a.entries @ (a.entries.T @ w), check_finite=False)
    return a.entries.T @ w


def project_consistency(a: SecretMatrix, y: Observation | np.ndarray, z: np.ndarray) -> np.ndarray:
    """Nearest point to ``z`` on the affine set ``{x : A x = y}``."""
    z = _check_latent(a, z)
    return z - apply_pseudoinverse(a, a.entries @ z - _values(a, y))


def split_components(a: SecretMatrix, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal split ``z = A^+ A z + (I - A^+ A) z`` into range and null parts."""
    z = _check_latent(a, z)
    range_part = apply_pseudoinverse(a, a.entries @ z)
    return range_part, z - range_part


def check_jl(a: SecretMatrix, points: Sequence[np.ndarray], epsilon: float) -> JlReport:
    """Worst pairwise distance distortion of ``A`` over ``points``."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != a.n:
        raise DimensionError(f"points must be a (P, {a.n}) array")
    i, j = np.triu_indices(x.shape[0], k=1)
    diffs = x[i] - x[j]
    norms = np.linalg.norm(diffs, axis=1)
    keep = norms > 0
    if not np.any(keep):
        raise ValueError("need at least two distinct points")
    ratios = np.linalg.norm(diffs[keep] @ a.entries.T, axis=1) / norms[keep]
    worst = float(np.max(np.abs(ratios - 1.0)))
    return JlReport(epsilon=epsilon, num_pairs=int(keep.sum()), max_distortion=worst, passed=worst <= epsilon)


def perturb_matrix(a: SecretMatrix, similarity: float, seed: int) -> SecretMatrix:
    """Attacker's estimate ``s A + sqrt(1 - s^2) G`` with fresh Gaussian ``G``."""
    if not 0.0 <= similarity <= 1.0:
        raise ValueError(f"similarity must lie in [0, 1], got {similarity}")
    if similarity == 1.0:
        return SecretMatrix(entries=a.entries, chol_gram=a.chol_gram, seed=a.seed, cs_ratio=a.cs_ratio)
    noise = gaussian_entries(seed, a.m, a.n, STREAM_PERTURB)
    entries = similarity * a.entries + math.sqrt(1.0 - similarity**2) * noise
    return SecretMatrix.from_entries(entries, seed=seed, cs_ratio=a.cs_ratio)


def row_cosines(a: SecretMatrix | np.ndarray, b: SecretMatrix | np.ndarray) -> np.ndarray:
    ea = a.entries if isinstance(a, SecretMatrix) else np.asarray(a)
    eb = b.entries if isinstance(b, SecretMatrix) else np.asarray(b)
    return np.sum(ea * eb, axis=1) / (np.linalg.norm(ea, axis=1) * np.linalg.norm(eb, axis=1))
