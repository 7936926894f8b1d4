import numpy as np
import pytest

from nestrec.proximal import (
    best_rank_r,
    project_l2_ball,
    row_soft_threshold,
    svd_soft_threshold,
    top_k_rows,
)


def nuclear(B):
    return np.linalg.svd(B, compute_uv=False).sum()


def l12(X):
    return np.linalg.norm(X, axis=1).sum()


def test_svd_soft_threshold_diagonal():
    out = svd_soft_threshold(np.diag([3.0, 1.0]), 2.0)
    assert np.allclose(out, np.diag([1.0, 0.0]), atol=1e-12)


def test_svd_soft_threshold_zero_tau_identity():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((4, 3))
    assert np.array_equal(svd_soft_threshold(B, 0.0), B)


def test_svd_soft_threshold_optimality_probe():
    # prox objective at the output beats 1e4 random perturbations
    rng = np.random.default_rng(1)
    B = rng.standard_normal((5, 4))
    tau = 0.3
    Z = svd_soft_threshold(B, tau)

    def obj(M):
        return 0.5 * np.linalg.norm(M - B) ** 2 + tau * nuclear(M)

    base = obj(Z)
    for _ in range(10_000):
        pert = Z + rng.standard_normal(Z.shape) * rng.choice([1e-3, 1e-1, 1.0])
        assert base <= obj(pert) + 1e-12


def test_row_soft_threshold_cases():
    X = np.array([[3.0, 4.0]])
    assert np.allclose(row_soft_threshold(X, 5.0), [[0.0, 0.0]])
    assert np.allclose(row_soft_threshold(X, 2.5), [[1.5, 2.0]])


def test_row_soft_threshold_optimality_probe():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((6, 3))
    tau = 0.4
    Z = row_soft_threshold(X, tau)

    def obj(M):
        return 0.5 * np.linalg.norm(M - X) ** 2 + tau * l12(M)

    base = obj(Z)
    for _ in range(10_000):
        pert = Z + rng.standard_normal(Z.shape) * rng.choice([1e-3, 1e-1, 1.0])
        assert base <= obj(pert) + 1e-12


def test_best_rank_r_diagonal():
    assert np.allclose(best_rank_r(np.diag([3.0, 1.0]), 1), np.diag([3.0, 0.0]))


def test_best_rank_r_full_rank_unchanged():
    rng = np.random.default_rng(3)
    B = rng.standard_normal((4, 3))
    assert np.linalg.norm(best_rank_r(B, 3) - B) <= 1e-12 * np.linalg.norm(B)


def test_best_rank_r_eckart_young_probe():
    rng = np.random.default_rng(4)
    B = rng.standard_normal((6, 5))
    r = 2
    Z = best_rank_r(B, r)
    resid = np.linalg.norm(B - Z)
    for _ in range(1000):
        cand = rng.standard_normal((6, r)) @ rng.standard_normal((5, r)).T
        # scale the candidate optimally toward B to make the probe stronger
        denom = np.linalg.norm(cand) ** 2
        if denom > 0:
            cand = cand * (np.tensordot(B, cand) / denom)
        assert resid <= np.linalg.norm(B - cand) + 1e-12


def test_top_k_rows_exact_support_unchanged():
    X = np.zeros((5, 3))
    X[1] = [1.0, 0.0, 0.0]
    X[3] = [0.0, 2.0, 0.0]
    assert np.array_equal(top_k_rows(X, 2), X)


def test_top_k_rows_zero_k():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((4, 2))
    assert np.array_equal(top_k_rows(X, 0), np.zeros_like(X))


def test_top_k_rows_exhaustive_projection():
    from itertools import combinations

    rng = np.random.default_rng(6)
    X = rng.standard_normal((8, 3))
    k = 3
    Z = top_k_rows(X, k)
    resid = np.linalg.norm(X - Z)
    best = min(
        np.linalg.norm(X - _keep(X, rows)) for rows in combinations(range(8), k)
    )
    assert resid <= best + 1e-12


def _keep(X, rows):
    out = np.zeros_like(X)
    for i in rows:
        out[i] = X[i]
    return out


def test_top_k_rows_tie_break_smaller_index():
    X = np.ones((4, 2))  # all rows tie
    out = top_k_rows(X, 2)
    assert np.array_equal(np.flatnonzero(np.any(out != 0, axis=1)), [0, 1])


def test_project_l2_ball_inside():
    v = np.array([1.0, 1.0])
    c = np.zeros(2)
    assert np.array_equal(project_l2_ball(v, c, 2.0), v)


def test_project_l2_ball_zero_radius():
    v = np.array([1.0, 1.0])
    c = np.array([0.5, 0.5])
    assert np.array_equal(project_l2_ball(v, c, 0.0), c)


def test_project_l2_ball_boundary_colinear():
    rng = np.random.default_rng(7)
    v = rng.standard_normal(5)
    c = rng.standard_normal(5)
    r = 0.3 * np.linalg.norm(v - c)
    out = project_l2_ball(v, c, r)
    assert abs(np.linalg.norm(out - c) - r) <= 1e-12
    cross = np.linalg.norm(np.outer(out - c, v - c) - np.outer(v - c, out - c))
    assert cross <= 1e-10


def test_prox_maps_nonexpansive():
    rng = np.random.default_rng(8)
    for _ in range(50):
        A = rng.standard_normal((5, 4))
        B = rng.standard_normal((5, 4))
        tau = abs(rng.standard_normal())
        assert np.linalg.norm(
            svd_soft_threshold(A, tau) - svd_soft_threshold(B, tau)
        ) <= np.linalg.norm(A - B) + 1e-12
        assert np.linalg.norm(
            row_soft_threshold(A, tau) - row_soft_threshold(B, tau)
        ) <= np.linalg.norm(A - B) + 1e-12


def test_projections_idempotent():
    rng = np.random.default_rng(9)
    B = rng.standard_normal((6, 4))
    Z = best_rank_r(B, 2)
    assert np.linalg.norm(best_rank_r(Z, 2) - Z) <= 1e-10 * np.linalg.norm(Z)
    X = top_k_rows(B, 3)
    assert np.array_equal(top_k_rows(X, 3), X)


def test_svd_soft_threshold_nuclear_identity():
    rng = np.random.default_rng(10)
    B = rng.standard_normal((5, 5))
    s = np.linalg.svd(B, compute_uv=False)
    tau = 0.7
    expected = np.maximum(s - tau, 0.0).sum()
    assert abs(nuclear(svd_soft_threshold(B, tau)) - expected) <= 1e-10


def test_negative_parameters_rejected():
    B = np.eye(2)
    with pytest.raises(ValueError):
        svd_soft_threshold(B, -1.0)
    with pytest.raises(ValueError):
        row_soft_threshold(B, -1.0)
    with pytest.raises(ValueError):
        best_rank_r(B, 3)
    with pytest.raises(ValueError):
        top_k_rows(B, -1)
    with pytest.raises(ValueError):
        project_l2_ball(np.zeros(2), np.zeros(2), -1.0)
