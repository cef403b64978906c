"""Command-line entry points.

Three subcommands: ``solve`` runs the sparse QP solver on a problem file,
``bench`` generates the chained spring-mass-damper benchmark, ``realtime``
simulates the closed loop.  Exit codes: 0 on success (Converged or
ActiveSetSolved for ``solve``), 2 when the iteration cap is hit, 1 on input
errors.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .io import (load_problem, save_problem, write_solution, write_solve_trace)
from .mpc import (ChainConfig, DivergenceError, MpcProblem, SparseQP,
                  assemble_sparse_qp, build_chain_benchmark)
from .realtime import (ExactController, RtConfig, performance_loss,
                       simulate_closed_loop)
from .solver import SolveStatus, SolverConfig, solve
from .sparse import FactorizationError


def _build_parser():
    parser = argparse.ArgumentParser(prog="aladin-qp",
                                     description="Sparse QP solver with an MPC front end")
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve a problem file")
    ps.add_argument("--problem", required=True, help="problem JSON path")
    ps.add_argument("--tol", type=float, default=1e-8)
    ps.add_argument("--max-iter", type=int, default=100_000)
    ps.add_argument("--no-barrier-updates", action="store_true",
                    help="refresh the curvature weights only once")
    ps.add_argument("--no-active-set", action="store_true",
                    help="disable the active-set shortcut")
    ps.add_argument("--theta", type=float, default=0.75)
    ps.add_argument("--trace", help="write the per-iteration trace CSV here")
    ps.add_argument("--out", help="write the solution JSON here")
    ps.add_argument("--plot", help="render the convergence figure here")

    pb = sub.add_parser("bench", help="generate the chain benchmark")
    pb.add_argument("--wagons", type=int, default=50)
    pb.add_argument("--horizon", type=int, default=100)
    pb.add_argument("--x0", type=float, default=2.0,
                    help="scalar replicated over all states")
    pb.add_argument("--emit-problem", help="write the problem JSON here")

    pr = sub.add_parser("realtime", help="simulate the closed loop")
    pr.add_argument("--problem", required=True, help="problem JSON path (mpc form)")
    pr.add_argument("--imax", type=int, default=5)
    pr.add_argument("--steps", type=int, default=500)
    pr.add_argument("--gamma0", type=float, default=1000.0)
    pr.add_argument("--trace", help="write the closed-loop trace CSV here")
    pr.add_argument("--loss", action="store_true",
                    help="also run the exact reference and report the relative loss")
    pr.add_argument("--plot", help="render the closed-loop figure here")
    return parser


def _fail(message) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _cmd_solve(args) -> int:
    try:
        problem = load_problem(args.problem)
        if isinstance(problem, MpcProblem):
            qp = assemble_sparse_qp(problem)
        else:
            qp = problem
        cfg = SolverConfig(tol=args.tol, max_iter=args.max_iter, theta=args.theta,
                           barrier_updates=not args.no_barrier_updates,
                           active_set_guess=not args.no_active_set)
    except (OSError, ValueError, DivergenceError) as exc:
        return _fail(exc)
    try:
        result = solve(qp, cfg)
    except (FactorizationError, RuntimeError) as exc:
        return _fail(exc)
    if args.out:
        write_solution(args.out, result)
    if args.trace:
        write_solve_trace(args.trace, result.trace)
    if args.plot:
        from .plots import render_convergence
        render_convergence(result.trace, args.plot)
    print(f"status={result.status.value} iterations={result.iterations} "
          f"primal_res={result.primal_res:.3e} dual_res={result.dual_res:.3e}")
    return 2 if result.status is SolveStatus.MAX_ITER else 0


def _cmd_bench(args) -> int:
    try:
        cfg = ChainConfig(n_wagons=args.wagons)
        n_x = 2 * args.wagons
        problem = build_chain_benchmark(cfg, args.horizon, np.full(n_x, args.x0))
    except (ValueError, DivergenceError) as exc:
        return _fail(exc)
    qp = assemble_sparse_qp(problem)
    if args.emit_problem:
        save_problem(args.emit_problem, problem)
    nnz_bounds = int(np.count_nonzero(qp.zl) + np.count_nonzero(qp.zu))
    total = qp.Q.nnz + qp.E.nnz + nnz_bounds
    print(f"n_x={problem.n_x} n_u={problem.n_u} n_c={problem.n_c} N={problem.N}")
    print(f"n_y={qp.n_y} n_z={qp.n_z} nnz_Q={qp.Q.nnz} nnz_E={qp.E.nnz} "
          f"nnz_bounds={nnz_bounds} nnz_total={total}")
    return 0


def _cmd_realtime(args) -> int:
    try:
        problem = load_problem(args.problem)
        if not isinstance(problem, MpcProblem):
            raise ValueError("realtime simulation needs a problem in mpc form")
        cfg = RtConfig(iterations_per_sample=args.imax, gamma0=args.gamma0,
                       sim_steps=args.steps)
    except (OSError, ValueError, DivergenceError) as exc:
        return _fail(exc)
    trace = simulate_closed_loop(problem, cfg, problem.x0)
    if args.trace:
        trace.to_csv(args.trace)
    if args.plot:
        from .plots import render_closed_loop
        render_closed_loop(trace, args.plot)
    if args.loss:
        reference = simulate_closed_loop(
            problem, cfg, problem.x0, controller=ExactController(problem))
        try:
            loss = performance_loss(trace, reference)
        except ValueError as exc:
            return _fail(exc)
        print(f"imax,{args.imax},loss,{loss!r},unstable,{int(trace.unstable)}")
    else:
        print(f"steps,{trace.steps},cost,{trace.accumulated_cost!r},"
              f"unstable,{int(trace.unstable)}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "solve":
        return _cmd_solve(args)
    if args.command == "bench":
        return _cmd_bench(args)
    return _cmd_realtime(args)


if __name__ == "__main__":
    sys.exit(main())
