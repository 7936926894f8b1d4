"""Measurement operators: sensing matrix, rank-measuring operator, nesting.

The nested operator maps a p1 x p2 target X to n scalars through
W(Psi1 @ X) in the single-sided form or W(Psi1 @ X @ Psi2.T) in the
doubly-sparse form. Frames are stored densely; fine at desk scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import derive_rng, read_matrix, write_matrix

__all__ = [
    "SensingMatrix",
    "RankOperator",
    "NestedOperator",
    "ProbeStructure",
    "RipEstimate",
    "gaussian_sensing",
    "gaussian_rank_operator",
    "rank_one_operator",
    "apply",
    "adjoint",
    "estimate_rip",
    "save_nested_operator",
    "load_nested_operator",
]

GAUSSIAN_DENSE = "gaussian_dense"
RANK_ONE = "rank_one_quadratic"


@dataclass(frozen=True)
class SensingMatrix:
    """Dense m x p1 sensing matrix with its entry variance recorded."""

    data: np.ndarray
    variance_scale: float
    seed: int | None = None

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"sensing matrix must be 2-d, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("sensing matrix has non-finite entries")

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def p1(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class RankOperator:
    """Linear operator on m x q matrices returning n scalars.

    gaussian_dense: frames is (n, m, q); measurement i is <frames[i], B>.
    rank_one_quadratic: probes is (n, m); measurement i is w_i' B w_i, i.e.
    the inner product with the rank-one frame w_i w_i'.
    """

    kind: str
    frames: np.ndarray | None = None
    probes: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.kind == GAUSSIAN_DENSE:
            if self.frames is None or self.frames.ndim != 3:
                raise ValueError("gaussian_dense needs frames of shape (n, m, q)")
            if not np.all(np.isfinite(self.frames)):
                raise ValueError("frames have non-finite entries")
        elif self.kind == RANK_ONE:
            if self.probes is None or self.probes.ndim != 2:
                raise ValueError("rank_one_quadratic needs probes of shape (n, m)")
            if not np.all(np.isfinite(self.probes)):
                raise ValueError("probes have non-finite entries")
        else:
            raise ValueError(f"unknown rank-operator kind {self.kind!r}")
        if self.n_measurements < 1:
            raise ValueError("need at least one measurement")

    @property
    def n_measurements(self) -> int:
        arr = self.frames if self.kind == GAUSSIAN_DENSE else self.probes
        return arr.shape[0]

    @property
    def in_shape(self) -> tuple[int, int]:
        if self.kind == GAUSSIAN_DENSE:
            return self.frames.shape[1], self.frames.shape[2]
        m = self.probes.shape[1]
        return m, m

    def apply(self, B: np.ndarray) -> np.ndarray:
        if B.shape != self.in_shape:
            raise ValueError(f"expected input of shape {self.in_shape}, got {B.shape}")
        if self.kind == GAUSSIAN_DENSE:
            n = self.n_measurements
            return self.frames.reshape(n, -1) @ B.ravel()
        return np.einsum("im,mk,ik->i", self.probes, B, self.probes, optimize=True)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        if y.shape != (self.n_measurements,):
            raise ValueError(f"expected {self.n_measurements} values, got shape {y.shape}")
        if self.kind == GAUSSIAN_DENSE:
            return np.tensordot(y, self.frames, axes=(0, 0))
        return (self.probes * y[:, None]).T @ self.probes

    def as_matrix(self) -> np.ndarray:
        """Matricized operator of shape (n, m*q); memory n*m*q*8 bytes."""
        if self.kind == GAUSSIAN_DENSE:
            return self.frames.reshape(self.n_measurements, -1)
        outer = self.probes[:, :, None] * self.probes[:, None, :]
        return outer.reshape(self.n_measurements, -1)


@dataclass(frozen=True)
class NestedOperator:
    """Composition A(X) = W(Psi1 X) or A(X) = W(Psi1 X Psi2')."""

    psi: SensingMatrix
    w: RankOperator
    psi2: SensingMatrix | None = None

    def __post_init__(self):
        m, q = self.w.in_shape
        if self.psi.m != m:
            raise ValueError(f"Psi maps into {self.psi.m} rows but W consumes {m}")
        if self.psi2 is not None and self.psi2.m != q:
            raise ValueError(f"Psi2 maps into {self.psi2.m} rows but W consumes {q} columns")

    @property
    def n_measurements(self) -> int:
        return self.w.n_measurements

    @property
    def target_shape(self) -> tuple[int, int]:
        p2 = self.psi2.p1 if self.psi2 is not None else self.w.in_shape[1]
        return self.psi.p1, p2

    def apply(self, X: np.ndarray) -> np.ndarray:
        if X.shape != self.target_shape:
            raise ValueError(f"expected target of shape {self.target_shape}, got {X.shape}")
        B = self.psi.data @ X
        if self.psi2 is not None:
            B = B @ self.psi2.data.T
        return self.w.apply(B)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        M = self.w.adjoint(y)
        G = self.psi.data.T @ M
        if self.psi2 is not None:
            G = G @ self.psi2.data
        return G


def gaussian_sensing(p1: int, m: int, seed: int) -> SensingMatrix:
    """m x p1 matrix with i.i.d. N(0, 1/m) entries."""
    if p1 < 1 or m < 1:
        raise ValueError(f"need p1, m >= 1, got p1={p1}, m={m}")
    rng = derive_rng(seed, "sensing")
    data = rng.standard_normal((m, p1)) / np.sqrt(m)
    return SensingMatrix(data=data, variance_scale=1.0 / m, seed=seed)


def gaussian_rank_operator(m: int, p2: int, n: int, seed: int) -> RankOperator:
    """n independent m x p2 Gaussian frames with i.i.d. N(0, 1/n) entries."""
    if min(m, p2, n) < 1:
        raise ValueError(f"need m, p2, n >= 1, got m={m}, p2={p2}, n={n}")
    rng = derive_rng(seed, "rank-operator")
    frames = rng.standard_normal((n, m, p2)) / np.sqrt(n)
    return RankOperator(kind=GAUSSIAN_DENSE, frames=frames, seed=seed)


def rank_one_operator(probes: np.ndarray, seed: int | None = None) -> RankOperator:
    """Rank-one measuring operator B -> [w_i' B w_i] from explicit probes."""
    return RankOperator(kind=RANK_ONE, probes=np.asarray(probes, dtype=float), seed=seed)


def apply(op: NestedOperator, X: np.ndarray) -> np.ndarray:
    """Measurements of X under the nested operator."""
    return op.apply(X)


def adjoint(op: NestedOperator, y: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`apply`: <apply(op, X), y> == <X, adjoint(op, y)>."""
    return op.adjoint(y)


@dataclass(frozen=True)
class ProbeStructure:
    """Structured probe family for empirical isometry checks."""

    kind: str  # "row_sparse" or "low_rank"
    level: int  # k for row_sparse, r for low_rank

    def __post_init__(self):
        if self.kind not in ("row_sparse", "low_rank"):
            raise ValueError(f"unknown structure kind {self.kind!r}")
        if self.level < 1:
            raise ValueError(f"level must be >= 1, got {self.level}")


@dataclass(frozen=True)
class RipEstimate:
    """Empirical lower bound on a restricted isometry constant.

    delta_lower_bound is the max over sampled unit-norm structured probes of
    |ratio - 1| where ratio = ||op(X)||^2 / ||X||^2. A sampled maximum never
    exceeds the supremum, so this LOWER-bounds the true constant; it is a
    diagnostic, not a certificate.
    """

    structure: ProbeStructure
    delta_lower_bound: float
    trials: int
    worst_case_ratio: float

    def merge(self, other: "RipEstimate") -> "RipEstimate":
        if other.structure != self.structure:
            raise ValueError("cannot merge estimates over different structures")
        return RipEstimate(
            structure=self.structure,
            delta_lower_bound=max(self.delta_lower_bound, other.delta_lower_bound),
            trials=self.trials + other.trials,
            worst_case_ratio=max(self.worst_case_ratio, other.worst_case_ratio),
        )


def _row_sparse_probe(p1: int, k: int, rng: np.random.Generator) -> np.ndarray:
    # factored draw on a random support, same family as the synthetic targets
    support = rng.choice(p1, size=k, replace=False)
    X = np.zeros((p1, k))
    X[support] = rng.standard_normal((k, k)) @ rng.standard_normal((k, k)).T
    return X


def _low_rank_probe(m: int, q: int, r: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((m, r)) @ rng.standard_normal((q, r)).T


def estimate_rip(
    op: SensingMatrix | RankOperator,
    structure: ProbeStructure,
    trials: int,
    seed: int,
) -> RipEstimate:
    """Probe the squared-norm distortion of ``op`` over random structured inputs.

    Row-sparse structures probe a SensingMatrix with unit-Frobenius k-row
    matrices; low-rank structures probe a RankOperator with unit-Frobenius
    rank-r matrices.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = derive_rng(seed, "rip-probe")

    if isinstance(op, SensingMatrix):
        if structure.kind != "row_sparse":
            raise ValueError("a SensingMatrix is probed with row_sparse structure")
        if structure.level > op.p1:
            raise ValueError(f"k={structure.level} exceeds p1={op.p1}")
        ratios = np.empty(trials)
        for t in range(trials):
            X = _row_sparse_probe(op.p1, structure.level, rng)
            ratios[t] = np.linalg.norm(op.data @ X) ** 2 / np.linalg.norm(X) ** 2
    elif isinstance(op, RankOperator):
        if structure.kind != "low_rank":
            raise ValueError("a RankOperator is probed with low_rank structure")
        m, q = op.in_shape
        if structure.level > min(m, q):
            raise ValueError(f"r={structure.level} exceeds min(m, q)={min(m, q)}")
        ratios = np.empty(trials)
        for t in range(trials):
            B = _low_rank_probe(m, q, structure.level, rng)
            ratios[t] = np.linalg.norm(op.apply(B)) ** 2 / np.linalg.norm(B) ** 2
    else:
        raise TypeError(f"cannot probe operator of type {type(op).__name__}")

    return RipEstimate(
        structure=structure,
        delta_lower_bound=float(np.max(np.abs(ratios - 1.0))),
        trials=trials,
        worst_case_ratio=float(np.max(ratios)),
    )


def save_nested_operator(op: NestedOperator, directory: str | Path) -> None:
    """Persist an operator as a JSON manifest plus one matrix file per frame."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "kind": op.w.kind,
        "n": op.n_measurements,
        "m": op.psi.m,
        "p1": op.psi.p1,
        "psi": "psi.nrm",
        "psi_variance_scale": op.psi.variance_scale,
        "seed": {"psi": op.psi.seed, "w": op.w.seed},
    }
    write_matrix(directory / "psi.nrm", op.psi.data)
    if op.psi2 is not None:
        manifest["psi2"] = "psi2.nrm"
        manifest["psi2_variance_scale"] = op.psi2.variance_scale
        manifest["m2"] = op.psi2.m
        manifest["p2"] = op.psi2.p1
        write_matrix(directory / "psi2.nrm", op.psi2.data)
    else:
        manifest["p2"] = op.w.in_shape[1]

    names = []
    if op.w.kind == GAUSSIAN_DENSE:
        for i in range(op.n_measurements):
            name = f"frame_{i:05d}.nrm"
            write_matrix(directory / name, op.w.frames[i])
            names.append(name)
    else:
        for i in range(op.n_measurements):
            name = f"probe_{i:05d}.nrm"
            write_matrix(directory / name, op.w.probes[i][:, None])
            names.append(name)
    manifest["frames"] = names
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_nested_operator(directory: str | Path) -> NestedOperator:
    """Inverse of :func:`save_nested_operator`."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    seeds = manifest.get("seed") or {}
    psi = SensingMatrix(
        data=read_matrix(directory / manifest["psi"]),
        variance_scale=manifest["psi_variance_scale"],
        seed=seeds.get("psi"),
    )
    psi2 = None
    if "psi2" in manifest:
        psi2 = SensingMatrix(
            data=read_matrix(directory / manifest["psi2"]),
            variance_scale=manifest["psi2_variance_scale"],
        )
    if manifest["kind"] == GAUSSIAN_DENSE:
        frames = np.stack([read_matrix(directory / f) for f in manifest["frames"]])
        w = RankOperator(kind=GAUSSIAN_DENSE, frames=frames, seed=seeds.get("w"))
    else:
        probes = np.stack([read_matrix(directory / f)[:, 0] for f in manifest["frames"]])
        w = RankOperator(kind=RANK_ONE, probes=probes, seed=seeds.get("w"))
    return NestedOperator(psi=psi, w=w, psi2=psi2)
