"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Budgets are asserted where the criterion states one. The synthetic grid
criterion also leaves its CSV in artifacts/ so the plotting package can be
driven against real output.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from nestrec.cpr import cpr_two_stage, generate_cpr
from nestrec.estimator import noise_band_check, recover
from nestrec.harness import ExperimentConfig, emit_csv, run_grid
from nestrec.minimax import (
    build_hypothesis_col,
    build_hypothesis_row,
    build_sign_packing,
    build_support_packing,
    fano_bound,
    kl_gaussian,
    lower_rate,
)
from nestrec.model import NoiseModel, ProblemDims, derive_rng, gaussian_noise, random_target
from nestrec.operators import (
    NestedOperator,
    ProbeStructure,
    estimate_rip,
    gaussian_rank_operator,
    gaussian_sensing,
)
from nestrec.solvers import (
    SolverConfig,
    iht_lowrank,
    iht_rowsparse,
    solve_lowrank_stage,
    solve_rowsparse_stage,
)

ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts"


def report(num, name, ok, detail, elapsed, budget=None):
    within = budget is None or elapsed <= budget
    status = "PASS" if (ok and within) else "FAIL"
    budget_txt = f" budget={budget:.0f}s" if budget is not None else ""
    print(f"[criterion {num:2d}] {status} {name}: {detail} ({elapsed:.1f}s{budget_txt})")
    assert ok, f"criterion {num} ({name}): {detail}"
    if budget is not None:
        assert within, f"criterion {num} exceeded {budget}s budget: {elapsed:.1f}s"


def fresh_instance(dims, sigma, seed):
    target = random_target(dims, seed)
    psi = gaussian_sensing(dims.p1, dims.m, seed + 1_000_003)
    w = gaussian_rank_operator(dims.m, dims.p2, dims.n, seed + 2_000_003)
    op = NestedOperator(psi=psi, w=w)
    z = gaussian_noise(dims.n, NoiseModel(sigma=sigma, seed=seed + 3_000_003))
    y = op.apply(target.matrix) + z
    return target, op, y


def test_criterion_01_exact_noise_free_recovery():
    start = time.perf_counter()
    p1, p2, k, r = 200, 10, 8, 2
    m = math.ceil(5 * k * math.log(p1 / k))
    assert m == 129
    n = 4 * r * max(m, p2)
    dims = ProblemDims(p1=p1, p2=p2, m=m, n=n, k=k, r=r)
    hits = 0
    for trial in range(20):
        target, op, y = fresh_instance(dims, 0.0, seed=11_000 + 97 * trial)
        res = recover(y, op, dims, 0.0, truth=target)
        hits += res.frobenius_error / target.frobenius_norm() <= 1e-3
    elapsed = time.perf_counter() - start
    report(1, "exact noise-free recovery", hits >= 19, f"{hits}/20 at rel<=1e-3", elapsed, 60)


def test_criterion_02_theorem1_bound_desk_scale():
    start = time.perf_counter()
    p1, p2, k, r = 500, 30, 10, 2
    sigma = math.sqrt(1e-4)
    m = math.ceil(5 * k * math.log(p1 / k))
    n = 4 * r * max(m, p2)
    dims = ProblemDims(p1=p1, p2=p2, m=m, n=n, k=k, r=r)
    bound = 10 * sigma * math.sqrt(r * max(m, p2))

    def one(trial):
        target, op, y = fresh_instance(dims, sigma, seed=21_000 + 101 * trial)
        res = recover(y, op, dims, sigma, truth=target)
        return res.frobenius_error <= bound

    with ThreadPoolExecutor(max_workers=2) as pool:
        results = list(pool.map(one, range(50)))
    hits = sum(results)
    elapsed = time.perf_counter() - start
    report(2, "theorem-1 bound", hits >= 48, f"{hits}/50 within 10*sigma*sqrt(r(m v p2))={bound:.3f}", elapsed, 600)


def pearson(x, y):
    return float(np.corrcoef(np.asarray(x, float), np.asarray(y, float))[0, 1])


def test_criterion_03_error_growth_trend():
    start = time.perf_counter()
    cfg = ExperimentConfig(
        p1=200,
        p2=10,
        k_range=(8, 10, 12, 14),
        r_range=(1, 2, 3, 4),
        sigma2=1e-4,
        trials=20,
        master_seed=31_000,
    )
    table = run_grid(cfg, threads=2)
    ARTIFACTS.mkdir(exist_ok=True)
    emit_csv(table, ARTIFACTS / "desk_grid.csv")
    assert (ARTIFACTS / "desk_grid.csv").read_text().count("\n") == len(table.rows) + 1

    corr_r = {k: pearson(cfg.r_range, [table.medians[(k, r)] for r in cfg.r_range]) for k in cfg.k_range}
    corr_k = {r: pearson(cfg.k_range, [table.medians[(k, r)] for k in cfg.k_range]) for r in cfg.r_range}
    ok = all(c >= 0.9 for c in corr_r.values()) and all(c >= 0.8 for c in corr_k.values())
    detail = (
        f"pearson vs r {min(corr_r.values()):.3f} (need >=0.9), "
        f"vs k {min(corr_k.values()):.3f} (need >=0.8), "
        f"{sum(t.failed for t in table.rows)} failed rows"
    )
    elapsed = time.perf_counter() - start
    report(3, "error growth trend", ok, detail, elapsed)


def test_criterion_04_chi_square_band():
    start = time.perf_counter()
    n, nu, trials = 1000, 400.0, 10_000
    res = noise_band_check(1.0, n, nu, trials, seed=41_000)
    floor = 1 - 2 * math.exp(-min(nu / 4, nu**2 / (16 * n)))
    se = math.sqrt(max(floor * (1 - floor), 1e-12) / trials)
    ok = res.empirical_probability >= floor - 3 * se
    elapsed = time.perf_counter() - start
    report(4, "chi-square band", ok, f"empirical={res.empirical_probability:.6f} floor={floor:.6f}", elapsed, 5)


def test_criterion_05_rip_probes():
    start = time.perf_counter()
    psi = gaussian_sensing(1000, 231, seed=51_000)
    est_psi = estimate_rip(psi, ProbeStructure("row_sparse", 10), trials=500, seed=51_001)
    m, p2, r = 231, 30, 2
    w = gaussian_rank_operator(m, p2, 4 * r * max(m, p2), seed=51_002)
    est_w = estimate_rip(w, ProbeStructure("low_rank", r), trials=500, seed=51_003)
    ok = est_psi.delta_lower_bound < 0.5 and est_w.delta_lower_bound < 0.5
    elapsed = time.perf_counter() - start
    report(
        5, "rip probes", ok,
        f"delta_psi={est_psi.delta_lower_bound:.3f} delta_w={est_w.delta_lower_bound:.3f} (each < 0.5)",
        elapsed, 60,
    )


def test_criterion_06_minimax_constructions():
    start = time.perf_counter()
    p1, p2, k, r = 100, 10, 8, 2
    supports = build_support_packing(p1, k, seed=61_000)
    signs_row = build_sign_packing(r, p2, seed=61_001)
    signs_col = build_sign_packing(k, r, seed=61_002)

    ok = supports.certified and signs_row.certified and signs_col.certified
    ok &= supports.log_count >= (4 / 25) * k * math.log(p1 / k)
    ok &= supports.min_distance >= k / 4
    ok &= signs_row.log_count >= (3 / 25) * r * p2
    ok &= signs_row.min_distance >= r * p2 / 8
    ok &= signs_col.log_count >= (3 / 25) * r * k
    ok &= signs_col.min_distance >= r * k / 8

    dims = ProblemDims(p1=p1, p2=p2, m=1, n=1, k=k, r=r)
    eps = 1.0
    for builder, signs in (
        (build_hypothesis_row, signs_row),
        (build_hypothesis_col, signs_col),
    ):
        hset = builder(dims, eps, supports, signs)  # verifies membership exhaustively
        rng = derive_rng(61_003, "subsample")
        idx = rng.choice(hset.count, size=min(60, hset.count), replace=False)
        flat = hset.members[idx].reshape(len(idx), -1)
        for i in range(len(idx)):
            d = np.linalg.norm(flat[i + 1 :] - flat[i], axis=1)
            if d.size:
                ok &= float(d.min()) >= eps / 2 - 1e-12
    elapsed = time.perf_counter() - start
    report(
        6, "minimax constructions", bool(ok),
        f"log|S|={supports.log_count:.3f} log|T'|={signs_row.log_count:.3f} log|T''|={signs_col.log_count:.3f}",
        elapsed, 60,
    )


def test_criterion_07_fano_arithmetic():
    start = time.perf_counter()
    fano = fano_bound(0.12, 5e-5)
    dims = ProblemDims(p1=1000, p2=30, m=1, n=1, k=10, r=2)
    rate = lower_rate(dims, 0.01, 1.0).rate
    ok = fano > 0.5 and abs(rate - 2.575e-4) <= 1e-7
    elapsed = time.perf_counter() - start
    report(7, "fano arithmetic", ok, f"fano={fano:.5f} lower_rate={rate:.6e}", elapsed, 5)


def test_criterion_08_kl_oracle():
    start = time.perf_counter()
    n_samples = 1_000_000
    worst = 0.0
    ok = True
    for case in range(5):
        rng = derive_rng(81_000 + case, "kl-case")
        p1, m, p2, n = 6, 4, 3, 5
        psi = gaussian_sensing(p1, m, seed=81_100 + case)
        w = gaussian_rank_operator(m, p2, n, seed=81_200 + case)
        op = NestedOperator(psi=psi, w=w)
        X = 0.05 * rng.standard_normal((p1, p2))
        sigma = 0.3
        closed = kl_gaussian(op, X, sigma)
        mean = op.apply(X)
        y = mean[None, :] + rng.standard_normal((n_samples, n)) * sigma
        llr = (np.sum(y**2, axis=1) - np.sum((y - mean[None, :]) ** 2, axis=1)) / (2 * sigma**2)
        est = float(np.mean(llr))
        se = float(np.std(llr)) / math.sqrt(n_samples)
        dev = abs(est - closed) / se
        worst = max(worst, dev)
        ok &= dev <= 3.0
    elapsed = time.perf_counter() - start
    report(8, "kl oracle", ok, f"worst deviation {worst:.2f} standard errors (5 cases)", elapsed, 30)


def test_criterion_09_cpr_desk_instance():
    start = time.perf_counter()
    hits = 0
    for trial in range(20):
        inst = generate_cpr(p=64, k=3, m=25, n=200, sigma=0.0, seed=91_000 + trial)
        Xhat, _ = cpr_two_stage(inst, k=3)
        lift = np.outer(inst.x_true, inst.x_true)
        rel = np.linalg.norm(Xhat - lift) / np.linalg.norm(lift)
        hits += rel <= 0.05
    elapsed = time.perf_counter() - start
    report(9, "cpr desk instance", hits >= 18, f"{hits}/20 at lifted rel err <= 5%", elapsed, 120)


def test_criterion_10_cross_solver_agreement():
    # five low-rank and five row-sparse noise-free instances, each solved by
    # both the ADMM stage and its greedy counterpart (IHT needs the heavier
    # oversampling to sit in its contraction regime)
    start = time.perf_counter()
    rng = derive_rng(101_000, "cross-solver")
    m, p2, r = 20, 6, 2
    n = 16 * r * max(m, p2)
    worst = 0.0
    ok = True
    for trial in range(5):
        w = gaussian_rank_operator(m, p2, n, seed=101_100 + trial)
        B = rng.standard_normal((m, r)) @ rng.standard_normal((p2, r)).T
        y = w.apply(B)
        B_admm, rep = solve_lowrank_stage(w, y, 0.0)
        B_iht = iht_lowrank(w, y, r, SolverConfig(tol=1e-10))
        rel = np.linalg.norm(B_admm - B_iht) / np.linalg.norm(B)
        worst = max(worst, rel)
        ok &= rel <= 1e-2 and rep.converged
    p1, mm, k, q = 100, 80, 5, 6
    for trial in range(5):
        psi = gaussian_sensing(p1, mm, seed=101_200 + trial)
        X = np.zeros((p1, q))
        X[rng.choice(p1, k, replace=False)] = rng.standard_normal((k, 2)) @ rng.standard_normal((q, 2)).T
        Bt = psi.data @ X
        X_admm, rep = solve_rowsparse_stage(psi, Bt, 0.0)
        X_iht = iht_rowsparse(psi, Bt, k, SolverConfig(tol=1e-10))
        rel = np.linalg.norm(X_admm - X_iht) / np.linalg.norm(X)
        worst = max(worst, rel)
        ok &= rel <= 1e-2 and rep.converged
    elapsed = time.perf_counter() - start
    report(10, "cross-solver agreement", ok, f"worst ADMM-vs-IHT rel dev {worst:.2e} (<=1e-2)", elapsed, 120)
