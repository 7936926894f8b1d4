"""Command-line entry points: recover, experiment, rip, minimax, packing, cpr."""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import cpr as cpr_mod
from . import minimax as mm
from .estimator import RecoveryConfig, recover
from .harness import ExperimentConfig, emit_csv, run_grid
from .model import ProblemDims, read_matrix, write_matrix
from .operators import (
    ProbeStructure,
    estimate_rip,
    gaussian_rank_operator,
    gaussian_sensing,
    load_nested_operator,
    NestedOperator,
)
from .solvers import SolverConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER_FAILURES = 2


class _Parser(argparse.ArgumentParser):
    # usage and I/O problems exit 1; code 2 is reserved for solver failures
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _recovery_config(args) -> RecoveryConfig:
    solver = SolverConfig(
        max_iters=args.max_iters,
        tol=args.tol,
        admm_rho=args.rho,
    )
    return RecoveryConfig(
        c1=args.c1,
        c2=args.c2,
        postprocess=not args.no_postprocess,
        stage1=args.stage1,
        stage2=args.stage2,
        solver=solver,
    )


def _add_recovery_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--c1", type=float, default=4.0, help="stage-1 radius constant")
    p.add_argument("--c2", type=float, default=4.0, help="stage-2 radius constant")
    p.add_argument("--stage1", choices=["admm", "iht"], default="admm")
    p.add_argument("--stage2", choices=["admm", "iht"], default="admm")
    p.add_argument("--no-postprocess", action="store_true")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--rho", type=float, default=1.0)


def _cmd_recover(args) -> int:
    op = load_nested_operator(args.operator)
    y = read_matrix(args.y).ravel()
    p1, p2 = op.target_shape
    dims = ProblemDims(p1=p1, p2=p2, m=op.psi.m, n=op.n_measurements, k=args.k, r=args.r)
    result = recover(y, op, dims, args.sigma, _recovery_config(args))
    if args.out:
        write_matrix(args.out, result.Xhat)
    print(
        f"stage1: iters={result.stage1_report.iters_used}"
        f" violation={result.stage1_report.constraint_violation:.3e}"
        f" converged={result.stage1_report.converged}"
    )
    print(
        f"stage2: iters={result.stage2_report.iters_used}"
        f" violation={result.stage2_report.constraint_violation:.3e}"
        f" converged={result.stage2_report.converged}"
    )
    print(f"estimate frobenius norm: {np.linalg.norm(result.Xhat):.6g}")
    return EXIT_OK if result.converged else EXIT_SOLVER_FAILURES


def _cmd_experiment(args) -> int:
    try:
        payload = json.loads(Path(args.config).read_text())
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        payload["master_seed"] = args.seed
    cfg = ExperimentConfig.from_json(payload)
    table = run_grid(cfg, threads=args.threads)
    try:
        emit_csv(table, args.out)
    except OSError as exc:
        print(f"cannot write results: {exc}", file=sys.stderr)
        return EXIT_USAGE
    failures = sum(t.failed for t in table.rows)
    for (k, r), med in sorted(table.medians.items()):
        print(f"k={k} r={r} median_normalized_sq_error={med:.6g}")
    print(f"{len(table.rows)} trials, {failures} failed -> {args.out}")
    return EXIT_SOLVER_FAILURES if failures else EXIT_OK


def _cmd_rip(args) -> int:
    psi = gaussian_sensing(args.p1, args.m, args.seed)
    est_psi = estimate_rip(
        psi, ProbeStructure("row_sparse", args.k), trials=args.trials, seed=args.seed
    )
    n = args.n if args.n is not None else 4 * args.r * max(args.m, args.p2)
    w = gaussian_rank_operator(args.m, args.p2, n, args.seed)
    est_w = estimate_rip(
        w, ProbeStructure("low_rank", args.r), trials=args.trials, seed=args.seed
    )
    gamma = (1.0 + est_psi.delta_lower_bound) * (1.0 + est_w.delta_lower_bound)
    print(f"psi: m={args.m} p1={args.p1} k={args.k} "
          f"delta_lower_bound={est_psi.delta_lower_bound:.4f} ({args.trials} probes)")
    print(f"w:   n={n} m={args.m} p2={args.p2} r={args.r} "
          f"delta_lower_bound={est_w.delta_lower_bound:.4f} ({args.trials} probes)")
    print(f"gamma working value (1+d_psi)(1+d_w) = {gamma:.4f}")
    print("note: sampled maxima lower-bound the true constants")
    return EXIT_OK


def _cmd_minimax(args) -> int:
    supports = mm.build_support_packing(args.p1, args.k, args.seed)
    signs_row = mm.build_sign_packing(args.r, args.p2, args.seed)
    signs_col = mm.build_sign_packing(args.k, args.r, args.seed)

    m = math.ceil(5 * args.k * math.log(args.p1 / args.k))
    n = 4 * args.r * max(m, args.p2)
    dims = ProblemDims(p1=args.p1, p2=args.p2, m=m, n=n, k=args.k, r=args.r)
    rate = mm.lower_rate(dims, args.sigma, args.gamma)

    xr = mm.build_hypothesis_row(dims, rate.epsilon, supports, signs_row)
    xc = mm.build_hypothesis_col(dims, rate.epsilon, supports, signs_col)

    psi = gaussian_sensing(args.p1, m, args.seed)
    w = gaussian_rank_operator(m, args.p2, n, args.seed)
    op = NestedOperator(psi=psi, w=w)
    kls = [mm.kl_gaussian(op, X, args.sigma) for X in xr.members]
    fano = mm.fano_bound(xr.log_count, args.alpha)

    print(f"dims: p1={args.p1} p2={args.p2} k={args.k} r={args.r} m={m} n={n}")
    print(f"epsilon = {rate.epsilon:.6g}")
    print(f"log|X_row| = {xr.log_count:.4f}  (floor {mm.SUPPORT_RATE * args.k * math.log(args.p1 / args.k) + mm.SIGN_RATE * args.r * args.p2:.4f})")
    print(f"log|X_col| = {xc.log_count:.4f}  (floor {mm.SUPPORT_RATE * args.k * math.log(args.p1 / args.k) + mm.SIGN_RATE * args.r * args.k:.4f})")
    print(f"KL mean over X_row = {np.mean(kls):.6g}  (cap gamma*eps^2/(2 sigma^2) = {args.gamma * rate.epsilon**2 / (2 * args.sigma**2):.6g})")
    print(f"fano value at achieved log-count = {fano:.4f}")
    print(f"lower rate = {rate.rate:.6g}")
    upper = args.sigma * math.sqrt(args.r * max(m, args.p2))
    print(f"theorem-1 scale sigma*sqrt(r(m v p2)) = {upper:.6g} "
          f"(ratio to lower rate: {upper / rate.rate:.1f}, polylog gap expected)")
    return EXIT_OK


def _cmd_packing(args) -> int:
    try:
        packing = mm.greedy_packing(
            N=args.universe,
            D=args.weight,
            min_distance=args.min_distance,
            target_log_count=args.target_log,
            seed=args.seed,
            retry_budget=args.retry_budget,
        )
    except mm.PackingCapacityError as exc:
        print(f"capacity error: {exc} (achieved {exc.achieved_count})", file=sys.stderr)
        return EXIT_USAGE
    print(
        f"packing: N={packing.universe_size} D={packing.weight}"
        f" min_distance={packing.min_distance} count={packing.count}"
        f" log_count={packing.log_count:.4f} certified={packing.certified}"
    )
    return EXIT_OK


def _cmd_cpr(args) -> int:
    instance = cpr_mod.generate_cpr(args.p, args.k, args.m, args.n, args.sigma, args.seed)
    cfg = cpr_mod.CprConfig(wf_iters=args.iters)
    start = time.perf_counter()
    Xhat, _ = cpr_mod.cpr_two_stage(instance, args.k, cfg)
    elapsed = time.perf_counter() - start
    lift = np.outer(instance.x_true, instance.x_true)
    rel = np.linalg.norm(Xhat - lift) / np.linalg.norm(lift)
    print(f"relative lifted error = {rel:.6g}")
    print(f"runtime = {elapsed:.3f}s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nestrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("recover", help="recover one instance from saved files")
    p.add_argument("--operator", required=True, help="operator directory (manifest + frames)")
    p.add_argument("--y", required=True, help="measurement vector file (n x 1 matrix)")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--out", default=None, help="where to write the estimate")
    _add_recovery_flags(p)
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("experiment", help="run a synthetic grid from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("rip", help="empirical restricted-isometry probes")
    p.add_argument("--p1", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--p2", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--n", type=int, default=None, help="default 4r*max(m,p2)")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_rip)

    p = sub.add_parser("minimax", help="lower-bound constructions and Fano table")
    p.add_argument("--p1", type=int, required=True)
    p.add_argument("--p2", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=5e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_minimax)

    p = sub.add_parser("packing", help="greedy binary packing with certification")
    p.add_argument("--universe", type=int, required=True)
    p.add_argument("--weight", type=int, required=True)
    p.add_argument("--min-distance", type=int, required=True)
    p.add_argument("--target-log", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--retry-budget", type=int, default=None)
    p.set_defaults(func=_cmd_packing)

    p = sub.add_parser("cpr", help="compressive phase retrieval demo")
    p.add_argument("--p", type=int, default=64)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--m", type=int, default=25)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=500)
    p.set_defaults(func=_cmd_cpr)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"nestrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
