"""Compressive phase retrieval from nested quadratic measurements.

Measurements are y_i = <Psi' w_i, x>^2 + z_i for a k-sparse x. Stage 1 runs
Wirtinger Flow on the compressed m-dimensional phase-retrieval problem
(vectors w_i) and lifts the estimate; stage 2 runs a hard-thresholding
iteration on the lifted constraint Psi X Psi' ~ Bhat with a rank-1 plus
entrywise-sparse projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .model import derive_rng, gaussian_noise, NoiseModel
from .operators import SensingMatrix, gaussian_sensing

__all__ = [
    "PhaselessInstance",
    "CprConfig",
    "generate_cpr",
    "wirtinger_flow",
    "cpr_two_stage",
]


@dataclass(frozen=True)
class CprConfig:
    """Iteration counts and constants for the two CPR stages."""

    wf_iters: int = 500
    iht_iters: int = 100
    power_iters: int = 100
    radius_constant: float = 3.0  # stage-2 ball radius is this times eps/sqrt(n)
    step_cap: float = 0.2
    step_tau: float = 330.0


@dataclass(frozen=True)
class PhaselessInstance:
    """One CPR problem: sensing matrix, probe vectors, measurements, noise bound."""

    psi: SensingMatrix
    probes: np.ndarray  # shape (n, m)
    y: np.ndarray  # shape (n,)
    epsilon: float
    x_true: np.ndarray | None = None

    def __post_init__(self):
        n, m = self.probes.shape
        if self.psi.m != m:
            raise ValueError(f"probes of length {m} do not match psi with {self.psi.m} rows")
        if self.y.shape != (n,):
            raise ValueError(f"expected {n} measurements, got shape {self.y.shape}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")

    @property
    def n(self) -> int:
        return self.probes.shape[0]

    @property
    def p(self) -> int:
        return self.psi.p1

    def effective_vectors(self) -> np.ndarray:
        """Rows are a_i = Psi' w_i, the measurement vectors seen by x."""
        return self.probes @ self.psi.data


def generate_cpr(
    p: int, k: int, m: int, n: int, sigma: float, seed: int
) -> PhaselessInstance:
    """Draw Psi with N(0, 1/m) entries, standard-normal probes, and a k-sparse x.

    The noise bound epsilon is set to the realized ||z||_2, the oracle value
    the recovery guarantee assumes available.
    """
    if not (1 <= k <= p):
        raise ValueError(f"need 1 <= k <= p, got k={k}, p={p}")
    if m < 1 or n < 1:
        raise ValueError(f"need m, n >= 1, got m={m}, n={n}")
    psi = gaussian_sensing(p, m, seed)
    rng = derive_rng(seed, "cpr-probes")
    probes = rng.standard_normal((n, m))

    rng_x = derive_rng(seed, "cpr-signal")
    support = np.sort(rng_x.choice(p, size=k, replace=False))
    x = np.zeros(p)
    x[support] = rng_x.standard_normal(k)

    z = gaussian_noise(n, NoiseModel(sigma=sigma, seed=seed))
    y = (probes @ (psi.data @ x)) ** 2 + z
    return PhaselessInstance(
        psi=psi,
        probes=probes,
        y=y,
        epsilon=float(np.linalg.norm(z)),
        x_true=x,
    )


def _wf_core(A: np.ndarray, y: np.ndarray, iters: int, cfg: CprConfig) -> np.ndarray:
    """Wirtinger Flow on measurements y_i ~ <A[i], x>^2.

    Spectral initialization: leading eigenvector of (1/n) sum y_i a_i a_i'
    by power iteration, scaled to sqrt(mean y). Step size at iteration t is
    min(1 - exp(-t/tau), cap) / ||x0||^2.
    """
    n, p = A.shape
    if not np.any(y):
        raise ValueError("all measurements are zero; spectral initialization undefined")
    with threadpool_limits(limits=1, user_api="blas"):
        return _wf_loop(A, y, iters, cfg)


def _wf_loop(A: np.ndarray, y: np.ndarray, iters: int, cfg: CprConfig) -> np.ndarray:
    n, p = A.shape
    S = A.T @ (y[:, None] * A) / n
    v = np.ones(p) / math.sqrt(p)
    for _ in range(cfg.power_iters):
        v = S @ v
        nv = np.linalg.norm(v)
        if nv == 0:
            raise ValueError("power iteration collapsed; spectral initialization failed")
        v /= nv
    lam = math.sqrt(max(float(np.mean(y)), 0.0))
    if lam == 0:
        raise ValueError("mean measurement is not positive; cannot scale initialization")
    x = lam * v

    inv_sq = 1.0 / lam**2
    for t in range(1, iters + 1):
        q = A @ x
        g = A.T @ ((q**2 - y) * q) / n
        mu = min(1.0 - math.exp(-t / cfg.step_tau), cfg.step_cap)
        x = x - mu * inv_sq * g
    return x


def wirtinger_flow(
    instance: PhaselessInstance, iters: int | None = None, cfg: CprConfig = CprConfig()
) -> np.ndarray:
    """Estimate x (up to global sign) from the phaseless measurements."""
    A = instance.effective_vectors()
    return _wf_core(A, instance.y, cfg.wf_iters if iters is None else iters, cfg)


def _hard_threshold(v: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(v)
    keep = np.argsort(-np.abs(v), kind="stable")[:k]
    out[keep] = v[keep]
    return out


def _sparse_iht(
    Psi: np.ndarray, b: np.ndarray, k: int, iters: int, lifted_radius: float
) -> np.ndarray:
    """Hard-thresholding pursuit of a k-sparse x with Psi x ~ b.

    Uses the normalized step ||g_S||^2 / ||Psi g_S||^2 on the current
    support; a fixed unit step diverges at the aggressive compression
    ratios this stage runs at. Stops early once the lifted residual
    ||Psi x x' Psi' - b b'||_F clears the constraint radius.
    """
    x = _hard_threshold(Psi.T @ b, k)
    for _ in range(iters):
        q = Psi @ x
        if np.linalg.norm(np.outer(q, q) - np.outer(b, b)) <= lifted_radius:
            break
        g = Psi.T @ (b - q)
        support = np.flatnonzero(x) if x.any() else np.argsort(-np.abs(g))[:k]
        gs = np.zeros_like(g)
        gs[support] = g[support]
        denom = float(np.linalg.norm(Psi @ gs) ** 2)
        mu = float(np.linalg.norm(gs) ** 2) / denom if denom > 1e-300 else 1.0
        x_new = _hard_threshold(x + mu * g, k)
        if np.array_equal(x_new, x) and np.linalg.norm(mu * g) < 1e-14 * max(
            np.linalg.norm(x), 1e-300
        ):
            break
        x = x_new
    return x


def cpr_two_stage(
    instance: PhaselessInstance, k: int, cfg: CprConfig = CprConfig()
) -> tuple[np.ndarray, np.ndarray]:
    """Two-stage CPR: Wirtinger Flow in the compressed space, then sparse IHT.

    Stage 1 recovers b ~ +-Psi x from y_i ~ <w_i, Psi x>^2, so the lifted
    pre-estimate is Bhat = b b'. Stage 2 runs the hard-thresholding
    iteration on Psi x ~ b and re-lifts, which fits the lifted constraint
    ||Psi X Psi' - Bhat||_F <= C eps / sqrt(n) with X = x x'. Returns
    (Xhat, xhat); Xhat is invariant under x -> -x by construction.
    """
    if k < 1 or k > instance.p:
        raise ValueError(f"need 1 <= k <= p, got k={k}")
    b = _wf_core(instance.probes, instance.y, cfg.wf_iters, cfg)

    Psi = instance.psi.data
    radius = cfg.radius_constant * instance.epsilon / math.sqrt(instance.n)
    with threadpool_limits(limits=1, user_api="blas"):
        xhat = _sparse_iht(Psi, b, k, cfg.iht_iters, radius)

    # fix the sign convention so repeated runs return the same vector
    if xhat.any():
        lead = int(np.argmax(np.abs(xhat)))
        if xhat[lead] < 0:
            xhat = -xhat
    return np.outer(xhat, xhat), xhat
