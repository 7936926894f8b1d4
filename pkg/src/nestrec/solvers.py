"""Stage solvers: constrained nuclear / l1,2 minimization via ADMM, plus IHT.

Both convex stages share one ADMM core on the splitting

    minimize  g(Z)  subject to  X = Z,  Op(X) = V,  V in ball(center, radius)

with g the nuclear norm (stage 1, Op = W) or the l1,2 norm (stage 2,
Op = Psi). The X-update solves a ridge system whose factorization is cached
once per solve; adjoints of the ball-side variables are maintained
incrementally so each iteration costs one apply and one adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from threadpoolctl import threadpool_limits

from .operators import RankOperator, SensingMatrix
from .proximal import (
    best_rank_r,
    row_soft_threshold,
    svd_soft_threshold,
    top_k_rows,
)

__all__ = [
    "SolverConfig",
    "SolveReport",
    "DivergenceError",
    "solve_lowrank_stage",
    "solve_rowsparse_stage",
    "iht_lowrank",
    "iht_rowsparse",
]

_DEFAULT_TOL = 1e-8
_OVER_RELAX = 1.6
_RHO_BASE = 20.0  # penalty per unit of iterate scale; admm_rho multiplies this
_RHO_ADAPT_FACTOR = 2.0
_RHO_ADAPT_RATIO = 10.0
_RHO_ADAPT_PERIOD = 10
_ADJOINT_REFRESH = 512
_DIVERGENCE_FACTOR = 1e6


class DivergenceError(RuntimeError):
    """Raised when an IHT iterate blows past any plausible solution scale."""


@dataclass(frozen=True)
class SolverConfig:
    """Iteration caps and tolerances shared by the stage solvers.

    ``tol`` of None resolves to 1e-8; callers with noisy data typically
    override it to 1e-6. ``radius_floor`` keeps zero-radius ball projections
    well-posed by clamping the radius up to radius_floor * ||center||.
    """

    max_iters: int = 2000
    tol: float | None = None
    admm_rho: float = 1.0
    radius_floor: float = 1e-9
    iht_step: float = 1.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol is not None and self.tol <= 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.admm_rho <= 0:
            raise ValueError(f"admm_rho must be > 0, got {self.admm_rho}")
        if self.iht_step <= 0:
            raise ValueError(f"iht_step must be > 0, got {self.iht_step}")

    @property
    def effective_tol(self) -> float:
        return self.tol if self.tol is not None else _DEFAULT_TOL


@dataclass(frozen=True)
class SolveReport:
    """Where a solve stopped and how feasible/optimal the iterate is."""

    iters_used: int
    primal_residual: float
    dual_residual: float
    constraint_violation: float
    objective: float
    converged: bool

    def __post_init__(self):
        for name in ("primal_residual", "dual_residual", "constraint_violation", "objective"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def _admm_constrained(
    init: np.ndarray,
    apply_op: Callable[[np.ndarray], np.ndarray],
    adjoint_op: Callable[[np.ndarray], np.ndarray],
    solve_reg: Callable[[np.ndarray], np.ndarray],
    prox: Callable[[np.ndarray, float], np.ndarray],
    objective: Callable[[np.ndarray], float],
    center: np.ndarray,
    radius: float,
    cfg: SolverConfig,
) -> tuple[np.ndarray, SolveReport]:
    # multithreaded BLAS thrashes on the small per-iteration GEMMs; the big
    # one-shot factorizations run before entering this loop
    with threadpool_limits(limits=1, user_api="blas"):
        return _admm_loop(
            init, apply_op, adjoint_op, solve_reg, prox, objective, center, radius, cfg
        )


def _admm_loop(
    init,
    apply_op,
    adjoint_op,
    solve_reg,
    prox,
    objective,
    center,
    radius,
    cfg: SolverConfig,
) -> tuple[np.ndarray, SolveReport]:
    tol = cfg.effective_tol
    alpha = _OVER_RELAX
    tiny = 1e-300

    center_norm = float(np.linalg.norm(center))
    radius = max(radius, cfg.radius_floor * center_norm)
    Ac = adjoint_op(center)

    X = init.copy()
    # the prox threshold 1/rho lives in iterate units, so normalize the
    # penalty by the data scale; this also makes the whole loop equivariant
    # under y -> alpha * y
    data_scale = max(float(np.linalg.norm(X)), tiny)
    rho = cfg.admm_rho * _RHO_BASE / data_scale
    rho_lo, rho_hi = rho * 1e-4, rho * 1e4
    Z = X.copy()
    Uz = np.zeros_like(X)
    AX = apply_op(X)
    d0 = AX - center
    dist0 = float(np.linalg.norm(d0))
    beta0 = 1.0 if dist0 <= radius else radius / dist0
    V = center + beta0 * d0
    Uv = np.zeros_like(V)
    P = Ac + beta0 * (adjoint_op(AX) - Ac)  # adjoint of V
    Q = np.zeros_like(X)  # adjoint of Uv

    r_pri = s_dual = np.inf
    converged = False
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        R = (Z - Uz) + (P - Q)
        X = solve_reg(R)
        AX = apply_op(X)

        AXh = alpha * AX + (1.0 - alpha) * V
        w = AXh + Uv
        At_w = adjoint_op(w)
        d = w - center
        dist = float(np.linalg.norm(d))
        beta = 1.0 if dist <= radius else radius / dist
        V_new = center + beta * d
        P_new = Ac + beta * (At_w - Ac)

        Xh = alpha * X + (1.0 - alpha) * Z
        Z_new = prox(Xh + Uz, 1.0 / rho)

        Uz = Uz + (Xh - Z_new)
        Uv = w - V_new
        Q_new = At_w - P_new

        r_pri = float(np.sqrt(np.linalg.norm(X - Z_new) ** 2 + np.linalg.norm(AX - V_new) ** 2))
        s_dual = rho * float(np.linalg.norm((Z_new - Z) + (P_new - P)))

        Z, V, P, Q = Z_new, V_new, P_new, Q_new

        scale_pri = max(
            float(np.sqrt(np.linalg.norm(X) ** 2 + np.linalg.norm(AX) ** 2)),
            float(np.sqrt(np.linalg.norm(Z) ** 2 + np.linalg.norm(V) ** 2)),
            center_norm,
            tiny,
        )
        # the x-block carries no objective term, so the pulled-back dual
        # Uz + Q vanishes at optimality; scale by the dual magnitudes instead
        scale_dual = max(rho * (float(np.linalg.norm(Uz)) + float(np.linalg.norm(Q))), tiny)
        if r_pri <= tol * scale_pri and s_dual <= tol * scale_dual:
            converged = True
            break

        # keep primal and dual progress balanced; the ridge solve is
        # rho-free so a penalty change only rescales the duals
        if iters % _RHO_ADAPT_PERIOD == 0:
            rn = r_pri / scale_pri
            sn = s_dual / scale_dual
            if rn > _RHO_ADAPT_RATIO * sn and rho * _RHO_ADAPT_FACTOR <= rho_hi:
                rho *= _RHO_ADAPT_FACTOR
                Uz /= _RHO_ADAPT_FACTOR
                Uv /= _RHO_ADAPT_FACTOR
                Q /= _RHO_ADAPT_FACTOR
            elif sn > _RHO_ADAPT_RATIO * rn and rho / _RHO_ADAPT_FACTOR >= rho_lo:
                rho /= _RHO_ADAPT_FACTOR
                Uz *= _RHO_ADAPT_FACTOR
                Uv *= _RHO_ADAPT_FACTOR
                Q *= _RHO_ADAPT_FACTOR

        if iters % _ADJOINT_REFRESH == 0:
            P = adjoint_op(V)
            Q = adjoint_op(Uv)

    violation = max(0.0, float(np.linalg.norm(AX - center)) - radius)
    report = SolveReport(
        iters_used=iters,
        primal_residual=r_pri if np.isfinite(r_pri) else 0.0,
        dual_residual=s_dual if np.isfinite(s_dual) else 0.0,
        constraint_violation=violation,
        objective=objective(X),
        converged=converged,
    )
    return X, report


def _ridge_solver_matrix(G: np.ndarray, shape: tuple[int, int]):
    """Cached solver for (I + G'G) x = r with x handled in matrix form."""
    n, d = G.shape
    if n <= d:
        F = cho_factor(np.eye(n) + G @ G.T)

        def solve(R: np.ndarray) -> np.ndarray:
            rv = R.ravel()
            return (rv - G.T @ cho_solve(F, G @ rv, check_finite=False)).reshape(shape)

    else:
        F = cho_factor(np.eye(d) + G.T @ G)

        def solve(R: np.ndarray) -> np.ndarray:
            return cho_solve(F, R.ravel(), check_finite=False).reshape(shape)

    return solve


def solve_lowrank_stage(
    w: RankOperator, y: np.ndarray, radius: float, cfg: SolverConfig = SolverConfig()
) -> tuple[np.ndarray, SolveReport]:
    """Minimize ||B||_* subject to ||W(B) - y||_2 <= radius.

    Returns the final iterate and a report; a non-converged run returns the
    best iterate with ``converged=False`` and leaves the decision to the
    caller.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (w.n_measurements,):
        raise ValueError(f"expected {w.n_measurements} measurements, got shape {y.shape}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    shape = w.in_shape
    G = w.as_matrix()
    solve_reg = _ridge_solver_matrix(G, shape)
    init = w.adjoint(y)
    return _admm_constrained(
        init=init,
        apply_op=w.apply,
        adjoint_op=w.adjoint,
        solve_reg=solve_reg,
        prox=svd_soft_threshold,
        objective=lambda B: float(np.linalg.svd(B, compute_uv=False).sum()),
        center=y,
        radius=radius,
        cfg=cfg,
    )


def solve_rowsparse_stage(
    psi: SensingMatrix,
    B_target: np.ndarray,
    radius: float,
    cfg: SolverConfig = SolverConfig(),
) -> tuple[np.ndarray, SolveReport]:
    """Minimize ||X||_{1,2} subject to ||Psi X - B_target||_F <= radius."""
    B_target = np.asarray(B_target, dtype=float)
    if B_target.ndim != 2 or B_target.shape[0] != psi.m:
        raise ValueError(f"target must have {psi.m} rows, got shape {B_target.shape}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    m, p1 = psi.data.shape
    A = psi.data
    if m <= p1:
        F = cho_factor(np.eye(m) + A @ A.T)

        def solve_reg(R: np.ndarray) -> np.ndarray:
            return R - A.T @ cho_solve(F, A @ R, check_finite=False)

    else:
        F = cho_factor(np.eye(p1) + A.T @ A)

        def solve_reg(R: np.ndarray) -> np.ndarray:
            return cho_solve(F, R, check_finite=False)

    return _admm_constrained(
        init=A.T @ B_target,
        apply_op=lambda X: A @ X,
        adjoint_op=lambda V: A.T @ V,
        solve_reg=solve_reg,
        prox=row_soft_threshold,
        objective=lambda X: float(np.linalg.norm(X, axis=1).sum()),
        center=B_target,
        radius=radius,
        cfg=cfg,
    )


def _iht(
    init: np.ndarray,
    apply_op: Callable[[np.ndarray], np.ndarray],
    adjoint_op: Callable[[np.ndarray], np.ndarray],
    project: Callable[[np.ndarray], np.ndarray],
    objective: Callable[[np.ndarray], float],
    y: np.ndarray,
    cfg: SolverConfig,
    report_radius: float,
) -> tuple[np.ndarray, SolveReport]:
    with threadpool_limits(limits=1, user_api="blas"):
        return _iht_loop(init, apply_op, adjoint_op, project, objective, y, cfg, report_radius)


def _iht_loop(
    init,
    apply_op,
    adjoint_op,
    project,
    objective,
    y,
    cfg: SolverConfig,
    report_radius: float,
) -> tuple[np.ndarray, SolveReport]:
    tol = cfg.effective_tol
    blowup = _DIVERGENCE_FACTOR * max(float(np.linalg.norm(y)), 1.0)
    B = project(init)
    converged = False
    change = np.inf
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        resid = y - apply_op(B)
        B_new = project(B + cfg.iht_step * adjoint_op(resid))
        norm_new = float(np.linalg.norm(B_new))
        if norm_new > blowup:
            raise DivergenceError(
                f"iterate norm {norm_new:.3e} exceeds {blowup:.3e} after {iters} iterations"
            )
        change = float(np.linalg.norm(B_new - B)) / max(norm_new, 1e-300)
        B = B_new
        if change <= tol:
            converged = True
            break
    data_resid = float(np.linalg.norm(y - apply_op(B)))
    report = SolveReport(
        iters_used=iters,
        primal_residual=data_resid,
        dual_residual=change if np.isfinite(change) else 0.0,
        constraint_violation=max(0.0, data_resid - report_radius),
        objective=objective(B),
        converged=converged,
    )
    return B, report


def _iht_lowrank(
    w: RankOperator,
    y: np.ndarray,
    r: int,
    cfg: SolverConfig = SolverConfig(),
    report_radius: float = 0.0,
) -> tuple[np.ndarray, SolveReport]:
    y = np.asarray(y, dtype=float)
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    return _iht(
        init=w.adjoint(y),
        apply_op=w.apply,
        adjoint_op=w.adjoint,
        project=lambda B: best_rank_r(B, min(r, *B.shape)),
        objective=lambda B: float(np.linalg.svd(B, compute_uv=False).sum()),
        y=y,
        cfg=cfg,
        report_radius=report_radius,
    )


def iht_lowrank(
    w: RankOperator, y: np.ndarray, r: int, cfg: SolverConfig = SolverConfig()
) -> np.ndarray:
    """Projected gradient descent onto rank-r matrices for W(B) ~ y.

    Every iterate has rank at most r; raises :class:`DivergenceError` on
    norm blow-up.
    """
    B, _ = _iht_lowrank(w, y, r, cfg)
    return B


def _iht_rowsparse(
    psi: SensingMatrix,
    B_target: np.ndarray,
    k: int,
    cfg: SolverConfig = SolverConfig(),
    report_radius: float = 0.0,
) -> tuple[np.ndarray, SolveReport]:
    B_target = np.asarray(B_target, dtype=float)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    A = psi.data
    return _iht(
        init=A.T @ B_target,
        apply_op=lambda X: A @ X,
        adjoint_op=lambda V: A.T @ V,
        project=lambda X: top_k_rows(X, min(k, X.shape[0])),
        objective=lambda X: float(np.linalg.norm(X, axis=1).sum()),
        y=B_target,
        cfg=cfg,
        report_radius=report_radius,
    )


def iht_rowsparse(
    psi: SensingMatrix, B_target: np.ndarray, k: int, cfg: SolverConfig = SolverConfig()
) -> np.ndarray:
    """Hard-thresholded Landweber iteration onto k-row matrices for Psi X ~ B."""
    X, _ = _iht_rowsparse(psi, B_target, k, cfg)
    return X
