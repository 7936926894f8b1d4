"""Constructive lower-bound apparatus: packings, hypothesis classes, Fano.

The distance/count floors quoted below come from an existential
Varshamov-Gilbert-type argument; here they are realized by randomized greedy
search followed by exhaustive certification, so every returned set is a
checked witness rather than a probabilistic claim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import ProblemDims, derive_rng
from .operators import NestedOperator

__all__ = [
    "PackingCapacityError",
    "PackingSet",
    "HypothesisSet",
    "greedy_packing",
    "build_support_packing",
    "build_sign_packing",
    "build_hypothesis_row",
    "build_hypothesis_col",
    "kl_gaussian",
    "fano_bound",
    "lower_rate",
    "LowerRate",
]

SUPPORT_DISTANCE_FRACTION = 0.25  # of k, between support sets
SUPPORT_RATE = 4.0 / 25.0  # times k * log(p1 / k)
SIGN_DISTANCE_FRACTION = 1.0 / 8.0  # of the bit-string length
SIGN_RATE = 3.0 / 25.0  # times the bit-string length

ROW_REPLICATED = "row_replicated"
COL_REPLICATED = "col_replicated"

_RANK_TOL = 1e-10


class PackingCapacityError(RuntimeError):
    """Search could not reach the requested packing size."""

    def __init__(self, message: str, achieved_count: int):
        super().__init__(message)
        self.achieved_count = achieved_count


@dataclass(frozen=True)
class PackingSet:
    """Family of fixed-weight binary vectors with a certified minimum distance."""

    universe_size: int
    weight: int
    min_distance: int
    members: np.ndarray  # shape (count, universe_size), entries in {0, 1}
    certified: bool

    @property
    def count(self) -> int:
        return self.members.shape[0]

    @property
    def log_count(self) -> float:
        return math.log(self.count)

    def verify(self) -> None:
        """Exhaustively re-check weights and pairwise Hamming distances."""
        if self.members.ndim != 2 or self.members.shape[1] != self.universe_size:
            raise ValueError("member array shape inconsistent with universe size")
        if not np.all((self.members == 0) | (self.members == 1)):
            raise ValueError("members must be 0/1 valued")
        if not np.all(self.members.sum(axis=1) == self.weight):
            raise ValueError(f"every member must have Hamming weight {self.weight}")
        M = self.count
        for i in range(M - 1):
            dists = np.count_nonzero(self.members[i + 1 :] != self.members[i], axis=1)
            if dists.size and int(dists.min()) < self.min_distance:
                j = i + 1 + int(np.argmin(dists))
                raise ValueError(
                    f"members {i} and {j} are at distance {int(dists.min())}"
                    f" < {self.min_distance}"
                )


def greedy_packing(
    N: int,
    D: int,
    min_distance: int,
    target_log_count: float,
    seed: int,
    retry_budget: int | None = None,
) -> PackingSet:
    """Rejection-sample weight-D binary vectors pairwise min_distance apart.

    Stops once log(count) reaches target_log_count and certifies the result
    exhaustively. Raises :class:`PackingCapacityError` (with the achieved
    count attached) if the budget of candidate draws runs out first.
    """
    if not (0 <= D <= N):
        raise ValueError(f"need 0 <= D <= N, got D={D}, N={N}")
    if min_distance < 0:
        raise ValueError(f"min_distance must be >= 0, got {min_distance}")

    target_count = max(1, math.ceil(math.exp(target_log_count) - 1e-12))
    if math.comb(N, D) < target_count:
        raise PackingCapacityError(
            f"only C({N},{D}) = {math.comb(N, D)} weight-{D} vectors exist,"
            f" need {target_count}",
            achieved_count=0,
        )
    if min_distance > 2 * D and target_count > 1:
        raise PackingCapacityError(
            f"weight-{D} vectors are at most 2D = {2 * D} apart,"
            f" cannot reach distance {min_distance} with {target_count} members",
            achieved_count=min(1, math.comb(N, D)),
        )
    budget = retry_budget if retry_budget is not None else 200 * target_count

    rng = derive_rng(seed, "packing")
    members = np.zeros((0, N), dtype=np.uint8)
    draws = 0
    while members.shape[0] < target_count and draws < budget:
        draws += 1
        cand = np.zeros(N, dtype=np.uint8)
        cand[rng.choice(N, size=D, replace=False)] = 1
        if members.shape[0]:
            dists = np.count_nonzero(members != cand, axis=1)
            if int(dists.min()) < min_distance:
                continue
        members = np.vstack([members, cand])

    if members.shape[0] < target_count:
        raise PackingCapacityError(
            f"reached {members.shape[0]} of {target_count} members after"
            f" {draws} draws",
            achieved_count=int(members.shape[0]),
        )

    packing = PackingSet(
        universe_size=N,
        weight=D,
        min_distance=min_distance,
        members=members,
        certified=False,
    )
    packing.verify()
    return PackingSet(
        universe_size=N,
        weight=D,
        min_distance=min_distance,
        members=members,
        certified=True,
    )


def build_support_packing(p1: int, k: int, seed: int) -> PackingSet:
    """Supports: weight-k subsets of [p1], distance >= k/4, log count >= (4/25) k log(p1/k)."""
    if 2 * k > p1:
        raise ValueError(f"need k <= p1/2, got k={k}, p1={p1}")
    return greedy_packing(
        N=p1,
        D=k,
        min_distance=math.ceil(SUPPORT_DISTANCE_FRACTION * k),
        target_log_count=SUPPORT_RATE * k * math.log(p1 / k),
        seed=seed,
    )


def build_sign_packing(
    rows: int,
    cols: int,
    seed: int,
    min_fraction: float = SIGN_DISTANCE_FRACTION,
    target_rate: float = SIGN_RATE,
) -> PackingSet:
    """Sign matrices as balanced bit strings of length rows*cols.

    Distance floor ceil(min_fraction * rows * cols), log-count floor
    target_rate * rows * cols. Bits map to signs by 0 -> -1, 1 -> +1.
    """
    N = rows * cols
    return greedy_packing(
        N=N,
        D=N // 2,
        min_distance=math.ceil(min_fraction * N),
        target_log_count=target_rate * N,
        seed=seed,
    )


def _sign_matrices(packing: PackingSet, rows: int, cols: int) -> np.ndarray:
    if packing.universe_size != rows * cols:
        raise ValueError(
            f"packing over {packing.universe_size} bits cannot fill {rows}x{cols} signs"
        )
    return (2.0 * packing.members.astype(float) - 1.0).reshape(-1, rows, cols)


def _support_indices(packing: PackingSet) -> list[np.ndarray]:
    return [np.flatnonzero(row) for row in packing.members]


@dataclass(frozen=True)
class HypothesisSet:
    """Matrices with <= k rows, rank <= r, norm epsilon, pairwise >= epsilon/2 apart."""

    kind: str
    epsilon: float
    members: np.ndarray  # shape (count, p1, p2)
    dims: ProblemDims

    @property
    def count(self) -> int:
        return self.members.shape[0]

    @property
    def log_count(self) -> float:
        return math.log(self.count)

    def verify(self) -> None:
        """Check membership and pairwise separation exhaustively."""
        eps = self.epsilon
        for i, X in enumerate(self.members):
            nonzero_rows = int(np.count_nonzero(np.any(X != 0.0, axis=1)))
            if nonzero_rows > self.dims.k:
                raise ValueError(f"member {i} has {nonzero_rows} > k nonzero rows")
            norm = float(np.linalg.norm(X))
            if abs(norm - eps) > 1e-12 * eps:
                raise ValueError(f"member {i} has norm {norm!r}, expected {eps!r}")
            sv = np.linalg.svd(X, compute_uv=False)
            if int(np.sum(sv > _RANK_TOL * sv[0])) > self.dims.r:
                raise ValueError(f"member {i} exceeds rank {self.dims.r}")
        flat = self.members.reshape(self.count, -1)
        for i in range(self.count - 1):
            d = np.linalg.norm(flat[i + 1 :] - flat[i], axis=1)
            if d.size and float(d.min()) < eps / 2.0 - 1e-12 * eps:
                j = i + 1 + int(np.argmin(d))
                raise ValueError(
                    f"members {i} and {j} are {float(d.min()):.6g} < eps/2 apart"
                )


def build_hypothesis_row(
    dims: ProblemDims,
    epsilon: float,
    supports: PackingSet,
    signs: PackingSet,
) -> HypothesisSet:
    """Members place ceil(k/r) vertical copies of an r x p2 sign matrix on the support rows."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if supports.universe_size != dims.p1 or supports.weight != dims.k:
        raise ValueError("support packing inconsistent with dims")
    sign_mats = _sign_matrices(signs, dims.r, dims.p2)
    scale = epsilon / math.sqrt(dims.k * dims.p2)
    reps = math.ceil(dims.k / dims.r)

    members = np.zeros((supports.count * sign_mats.shape[0], dims.p1, dims.p2))
    idx = 0
    for S in _support_indices(supports):
        for T in sign_mats:
            members[idx][S] = scale * np.tile(T, (reps, 1))[: dims.k]
            idx += 1
    hset = HypothesisSet(kind=ROW_REPLICATED, epsilon=epsilon, members=members, dims=dims)
    hset.verify()
    return hset


def build_hypothesis_col(
    dims: ProblemDims,
    epsilon: float,
    supports: PackingSet,
    signs: PackingSet,
) -> HypothesisSet:
    """Members repeat each column of a k x r sign matrix ceil(p2/r) times, truncated to p2."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if supports.universe_size != dims.p1 or supports.weight != dims.k:
        raise ValueError("support packing inconsistent with dims")
    sign_mats = _sign_matrices(signs, dims.k, dims.r)
    scale = epsilon / math.sqrt(dims.k * dims.p2)
    reps = math.ceil(dims.p2 / dims.r)

    members = np.zeros((supports.count * sign_mats.shape[0], dims.p1, dims.p2))
    idx = 0
    for S in _support_indices(supports):
        for T in sign_mats:
            members[idx][S] = scale * np.repeat(T, reps, axis=1)[:, : dims.p2]
            idx += 1
    hset = HypothesisSet(kind=COL_REPLICATED, epsilon=epsilon, members=members, dims=dims)
    hset.verify()
    return hset


def kl_gaussian(op: NestedOperator, X: np.ndarray, sigma: float) -> float:
    """KL divergence of N(A(X), sigma^2 I) from N(0, sigma^2 I): ||A(X)||^2 / (2 sigma^2)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    return float(np.linalg.norm(op.apply(X)) ** 2) / (2.0 * sigma**2)


def fano_bound(log_m: float, alpha: float) -> float:
    """Fano failure-probability floor sqrt(M)/(1+sqrt(M)) * (1 - 2a - sqrt(2a/log M)).

    Takes log M directly so crude lower bounds on the hypothesis count can be
    plugged in; the value may be <= 0, which the caller interprets as an
    uninformative bound.
    """
    if log_m <= 0:
        raise ValueError(f"log_m must be > 0, got {log_m}")
    if not (0 < alpha < 0.125):
        raise ValueError(f"alpha must be in (0, 1/8), got {alpha}")
    root_m = math.exp(log_m / 2.0)
    return root_m / (1.0 + root_m) * (1.0 - 2.0 * alpha - math.sqrt(2.0 * alpha / log_m))


class LowerRate(NamedTuple):
    """Minimax error floor and the packing norm that witnesses it."""

    rate: float  # error threshold exceeded with probability > 1/2
    epsilon: float  # Frobenius norm of the hypothesis-set members (= 4 * rate)


def lower_rate(dims: ProblemDims, sigma: float, gamma: float) -> LowerRate:
    """Evaluate 2.5e-3 * sigma * sqrt((k log(p1/k) + r (k v p2)) / gamma)."""
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    term = dims.k * math.log(dims.p1 / dims.k) + dims.r * max(dims.k, dims.p2)
    epsilon = 1e-2 * sigma * math.sqrt(term / gamma)
    return LowerRate(rate=epsilon / 4.0, epsilon=epsilon)
