import numpy as np
import pytest

from nestrec.model import NoiseModel, gaussian_noise
from nestrec.operators import gaussian_rank_operator, gaussian_sensing
from nestrec.solvers import (
    DivergenceError,
    SolverConfig,
    iht_lowrank,
    iht_rowsparse,
    solve_lowrank_stage,
    solve_rowsparse_stage,
)


def low_rank(rng, m, p2, r):
    return rng.standard_normal((m, r)) @ rng.standard_normal((p2, r)).T


def row_sparse(rng, p1, p2, k, r):
    X = np.zeros((p1, p2))
    X[rng.choice(p1, k, replace=False)] = low_rank(rng, k, p2, r).reshape(k, p2)
    return X


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(admm_rho=-1.0)
    assert SolverConfig().effective_tol == 1e-8


def test_lowrank_stage_exact_recovery():
    rng = np.random.default_rng(0)
    m, p2, r = 20, 15, 2
    n = 4 * r * max(m, p2)
    w = gaussian_rank_operator(m, p2, n, seed=1)
    B = low_rank(rng, m, p2, r)
    y = w.apply(B)
    Bh, rep = solve_lowrank_stage(w, y, 0.0)
    assert rep.converged
    assert np.linalg.norm(Bh - B) / np.linalg.norm(B) <= 1e-3
    assert rep.constraint_violation <= 10 * SolverConfig().effective_tol * np.linalg.norm(y)


def test_lowrank_stage_zero_data():
    w = gaussian_rank_operator(5, 4, 12, seed=2)
    Bh, rep = solve_lowrank_stage(w, np.zeros(12), 0.0)
    assert np.linalg.norm(Bh) <= 1e-12
    assert rep.converged


def test_lowrank_stage_noisy_error_bound():
    # radius constants c1 = c2 = 4 at the synthetic-grid scale
    rng = np.random.default_rng(1)
    m, p2, r, sigma = 231, 30, 2, 0.01
    n = 4 * r * max(m, p2)
    cfg = SolverConfig(tol=1e-6)
    bound = 4 * sigma * np.sqrt(r * max(m, p2))
    for trial in range(3):
        w = gaussian_rank_operator(m, p2, n, seed=50 + trial)
        B = low_rank(rng, m, p2, r)
        z = gaussian_noise(n, NoiseModel(sigma=sigma, seed=60 + trial))
        y = w.apply(B) + z
        radius = sigma * np.sqrt(n + 4 * r * max(m, p2))
        Bh, rep = solve_lowrank_stage(w, y, radius, cfg)
        assert rep.converged
        assert np.linalg.norm(Bh - B) <= bound


def test_rowsparse_stage_exact_recovery():
    rng = np.random.default_rng(2)
    p1, m, p2, k = 1000, 231, 30, 10
    psi = gaussian_sensing(p1, m, seed=3)
    X = row_sparse(rng, p1, p2, k, r=2)
    Bt = psi.data @ X
    Xh, rep = solve_rowsparse_stage(psi, Bt, 0.0)
    assert rep.converged
    assert np.linalg.norm(Xh - X) / np.linalg.norm(X) <= 1e-3


def test_rowsparse_stage_zero_target():
    psi = gaussian_sensing(12, 6, seed=4)
    Xh, rep = solve_rowsparse_stage(psi, np.zeros((6, 3)), 0.0)
    assert np.linalg.norm(Xh) <= 1e-12


def test_rowsparse_stage_huge_radius_returns_zero():
    # the origin is feasible and has minimal norm
    rng = np.random.default_rng(5)
    psi = gaussian_sensing(12, 8, seed=6)
    Bt = rng.standard_normal((8, 3))
    Xh, rep = solve_rowsparse_stage(psi, Bt, 2.0 * np.linalg.norm(Bt))
    assert np.linalg.norm(Xh) <= 1e-6 * np.linalg.norm(Bt)


def test_solvers_respect_objective_of_feasible_truth():
    rng = np.random.default_rng(6)
    m, p2, r = 18, 6, 2
    n = 4 * r * max(m, p2)
    w = gaussian_rank_operator(m, p2, n, seed=7)
    B = low_rank(rng, m, p2, r)
    y = w.apply(B)
    Bh, rep = solve_lowrank_stage(w, y, 0.0)
    truth_obj = np.linalg.svd(B, compute_uv=False).sum()
    scale = max(np.linalg.norm(y), 1.0)
    assert rep.objective <= truth_obj + 10 * SolverConfig().effective_tol * scale


def test_iht_lowrank_exact():
    # unit-step SVP wants a stronger isometry than the convex stage; 16x
    # oversampling puts it safely in its contraction regime
    rng = np.random.default_rng(7)
    m, p2, r = 20, 6, 2
    n = 16 * r * max(m, p2)
    w = gaussian_rank_operator(m, p2, n, seed=8)
    B = low_rank(rng, m, p2, r)
    y = w.apply(B)
    cfg = SolverConfig(max_iters=500, tol=1e-10)
    Bh = iht_lowrank(w, y, r, cfg)
    assert np.linalg.norm(Bh - B) / np.linalg.norm(B) <= 1e-6
    sv = np.linalg.svd(Bh, compute_uv=False)
    assert np.sum(sv > 1e-10 * sv[0]) <= r


def test_iht_lowrank_zero_measurements():
    w = gaussian_rank_operator(5, 4, 10, seed=9)
    assert np.array_equal(iht_lowrank(w, np.zeros(10), 2), np.zeros((5, 4)))


def test_iht_lowrank_divergence_guard():
    # unit step is unstable when n is small next to the frame dimension;
    # the guard must trip instead of returning garbage
    rng = np.random.default_rng(10)
    m, p2, r = 129, 10, 1
    n = 4 * r * max(m, p2)
    w = gaussian_rank_operator(m, p2, n, seed=11)
    B = low_rank(rng, m, p2, r)
    y = w.apply(B)
    with pytest.raises(DivergenceError):
        iht_lowrank(w, y, r, SolverConfig(max_iters=2000))


def test_iht_rowsparse_exact():
    rng = np.random.default_rng(11)
    p1, m, p2, k = 100, 80, 5, 5
    psi = gaussian_sensing(p1, m, seed=12)
    X = row_sparse(rng, p1, p2, k, r=2)
    Bt = psi.data @ X
    Xh = iht_rowsparse(psi, Bt, k, SolverConfig(max_iters=500, tol=1e-10))
    assert np.linalg.norm(Xh - X) / np.linalg.norm(X) <= 1e-6
    assert np.count_nonzero(np.any(Xh != 0, axis=1)) <= k


def test_iht_rowsparse_dense_k_matches_least_squares():
    # k = p1 removes the thresholding, leaving a Landweber iteration for
    # the least-squares solution of an overdetermined consistent system
    rng = np.random.default_rng(12)
    p1, m, p2 = 4, 60, 3
    psi = gaussian_sensing(p1, m, seed=13)
    X = rng.standard_normal((p1, p2))
    Bt = psi.data @ X
    Xh = iht_rowsparse(psi, Bt, p1, SolverConfig(max_iters=2000, tol=1e-13))
    normal_eq = np.linalg.solve(psi.data.T @ psi.data, psi.data.T @ Bt)
    assert np.linalg.norm(Xh - normal_eq) / np.linalg.norm(normal_eq) <= 1e-6


def test_iht_rowsparse_zero_target():
    psi = gaussian_sensing(10, 8, seed=14)
    assert np.array_equal(iht_rowsparse(psi, np.zeros((8, 2)), 3), np.zeros((10, 2)))


def test_cross_solver_agreement():
    rng = np.random.default_rng(13)
    m, p2, r = 20, 6, 2
    n = 16 * r * max(m, p2)
    for trial in range(2):
        w = gaussian_rank_operator(m, p2, n, seed=20 + trial)
        B = low_rank(rng, m, p2, r)
        y = w.apply(B)
        B_admm, _ = solve_lowrank_stage(w, y, 0.0)
        B_iht = iht_lowrank(w, y, r, SolverConfig(tol=1e-10))
        rel = np.linalg.norm(B_admm - B_iht) / np.linalg.norm(B)
        assert rel <= 1e-2


def test_solvers_deterministic():
    rng = np.random.default_rng(14)
    m, p2, r = 12, 5, 2
    n = 4 * r * max(m, p2)
    w = gaussian_rank_operator(m, p2, n, seed=15)
    B = low_rank(rng, m, p2, r)
    y = w.apply(B)
    B1, rep1 = solve_lowrank_stage(w, y, 0.0)
    B2, rep2 = solve_lowrank_stage(w, y, 0.0)
    assert np.array_equal(B1, B2)
    assert rep1 == rep2


def test_nonconvergence_reported_not_raised():
    rng = np.random.default_rng(15)
    m, p2, r = 12, 5, 2
    n = 4 * r * max(m, p2)
    w = gaussian_rank_operator(m, p2, n, seed=16)
    y = w.apply(low_rank(rng, m, p2, r))
    Bh, rep = solve_lowrank_stage(w, y, 0.0, SolverConfig(max_iters=3))
    assert not rep.converged
    assert rep.iters_used == 3
    assert np.all(np.isfinite(Bh))
