"""Domain types for targets, dimensions, and noise, plus seeded generation."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ProblemDims",
    "StructuredTarget",
    "NoiseModel",
    "derive_rng",
    "random_target",
    "gaussian_noise",
    "write_matrix",
    "read_matrix",
]

_MASK64 = (1 << 64) - 1

# Binary matrix file: magic, two little-endian u64 dims, row-major f64 payload.
_MATRIX_MAGIC = b"NRM1"


def derive_rng(master_seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Derive an independent PCG64 stream from (master_seed, purpose, index).

    The whole repo draws randomness through this single mechanism so that
    per-trial streams never depend on execution order.
    """
    tag = int.from_bytes(
        hashlib.blake2s(purpose.encode("utf-8"), digest_size=8).digest(), "little"
    )
    entropy = [master_seed & _MASK64, tag, index & _MASK64]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class ProblemDims:
    """Dimensions of one recovery problem.

    p1, p2: target matrix shape; m: compressed row dimension; n: number of
    measurements; k: row-sparsity level; r: rank level.
    """

    p1: int
    p2: int
    m: int
    n: int
    k: int
    r: int

    def __post_init__(self):
        if min(self.p1, self.p2, self.m, self.n, self.k, self.r) < 1:
            raise ValueError(f"all dimensions must be >= 1, got {self}")
        if not (self.r <= self.k <= self.p1):
            raise ValueError(f"need r <= k <= p1, got r={self.r}, k={self.k}, p1={self.p1}")
        if self.r > self.p2:
            raise ValueError(f"need r <= p2, got r={self.r}, p2={self.p2}")

    @property
    def compressive(self) -> bool:
        """Whether the measurement count sits below the ambient dimension.

        Reported for context only, never enforced.
        """
        return self.n < self.p1 * self.p2


@dataclass(frozen=True)
class NoiseModel:
    """Additive i.i.d. Gaussian noise with standard deviation ``sigma``."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class StructuredTarget:
    """A row-sparse low-rank matrix together with its factor representation.

    matrix = left_factor @ right_factor.T exactly; rows outside ``support``
    are identically zero; rank is at most the factor width.
    """

    matrix: np.ndarray
    support: tuple[int, ...]
    left_factor: np.ndarray
    right_factor: np.ndarray

    def __post_init__(self):
        self.validate()

    @property
    def rank_budget(self) -> int:
        return self.left_factor.shape[1]

    def validate(self) -> None:
        p1, p2 = self.matrix.shape
        r = self.left_factor.shape[1]
        if self.left_factor.shape != (p1, r) or self.right_factor.shape != (p2, r):
            raise ValueError("factor shapes inconsistent with matrix")
        if list(self.support) != sorted(set(self.support)):
            raise ValueError("support must be sorted and duplicate-free")
        if self.support and (self.support[0] < 0 or self.support[-1] >= p1):
            raise ValueError("support indices out of range")

        recon = self.left_factor @ self.right_factor.T
        scale = np.linalg.norm(self.matrix)
        if np.linalg.norm(recon - self.matrix) > 1e-12 * max(scale, 1e-300):
            raise ValueError("matrix does not equal left_factor @ right_factor.T")

        off = np.setdiff1d(np.arange(p1), np.asarray(self.support, dtype=int))
        if off.size and np.any(self.matrix[off] != 0.0):
            raise ValueError("nonzero rows outside the declared support")

        if scale > 0:
            sv = np.linalg.svd(self.matrix, compute_uv=False)
            if np.sum(sv > 1e-10 * sv[0]) > r:
                raise ValueError("numerical rank exceeds the factor width")

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.matrix))


def random_target(dims: ProblemDims, seed: int) -> StructuredTarget:
    """Draw a target with a uniformly random k-row support and Gaussian factors.

    The k nonzero rows are a uniform k-subset of [p1]; the nonzero entries of
    both factors are i.i.d. standard normal. Deterministic given (dims, seed).
    """
    rng = derive_rng(seed, "target")
    support = np.sort(rng.choice(dims.p1, size=dims.k, replace=False))
    left = np.zeros((dims.p1, dims.r))
    left[support] = rng.standard_normal((dims.k, dims.r))
    right = rng.standard_normal((dims.p2, dims.r))
    return StructuredTarget(
        matrix=left @ right.T,
        support=tuple(int(i) for i in support),
        left_factor=left,
        right_factor=right,
    )


def gaussian_noise(n: int, model: NoiseModel) -> np.ndarray:
    """Sample n i.i.d. N(0, sigma^2) values; sigma = 0 gives the zero vector."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if model.sigma == 0:
        return np.zeros(n)
    rng = derive_rng(model.seed, "noise")
    return model.sigma * rng.standard_normal(n)


def write_matrix(path: str | Path, matrix: np.ndarray) -> None:
    """Persist a dense real matrix in the repo's binary format."""
    a = np.ascontiguousarray(matrix, dtype="<f8")
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {a.shape}")
    with open(path, "wb") as fh:
        fh.write(_MATRIX_MAGIC)
        fh.write(struct.pack("<QQ", a.shape[0], a.shape[1]))
        fh.write(a.tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    """Load a matrix written by :func:`write_matrix`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MATRIX_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        rows, cols = struct.unpack("<QQ", fh.read(16))
        payload = fh.read(rows * cols * 8)
    if len(payload) != rows * cols * 8:
        raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
