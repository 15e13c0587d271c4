"""Command-line entry point: ``blocksparse <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import bench, certify, theory
from .core import BlockPartition, RandomSeed, read_csv, write_csv
from .solver import SolverOptions, recover


def _finite_or_none(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def cmd_solve(args) -> int:
    A = read_csv(args.matrix)
    y = read_csv(args.measurements, vector=True)
    if A.shape[1] % args.block_size:
        print(f"error: {A.shape[1]} columns are not a multiple of block size {args.block_size}",
              file=sys.stderr)
        return 1
    part = BlockPartition(A.shape[1] // args.block_size, args.block_size)
    defaults = SolverOptions()
    opts = SolverOptions(
        max_iterations=args.max_iter or defaults.max_iterations,
        primal_tolerance=args.tol or defaults.primal_tolerance,
        fixed_point_tolerance=defaults.fixed_point_tolerance,
    )
    res = recover(A, y, part, k=args.sparsity, opts=opts)
    write_csv(args.out, res.signal.values)
    return 0 if res.converged else 2


def cmd_certify(args) -> int:
    seed = RandomSeed(args.seed)
    report = {"samples_tested": args.samples, "violations": None, "worst_margin": None,
              "success_fraction": None, "seed": args.seed}
    if args.mode == "montecarlo":
        r = certify.monte_carlo_nullspace_check(args.n, args.d, args.m, args.k, args.samples, seed)
        report.update(violations=r.violations, worst_margin=_finite_or_none(r.worst_margin),
                      success_fraction=1.0 - r.violations / r.samples_tested)
    elif args.mode == "equivalence":
        frac = certify.equivalence_test(args.n, args.d, args.m, args.k, args.samples, seed)
        report.update(success_fraction=frac, violations=round(args.samples * (1 - frac)))
    else:
        frac = certify.oracle_recovery_fraction(args.n, args.d, args.m, args.k, args.samples, seed)
        report.update(success_fraction=frac, violations=round(args.samples * (1 - frac)))
    print(_dump(report))
    return 0


def cmd_theory_bound(args) -> int:
    params = theory.derived_constants(args.eps, args.eta, args.cover_dim, args.delta)
    rep = theory.bound_report(args.alpha, args.beta, params, d=args.d).to_dict()
    rep["ln_xi"] = _finite_or_none(rep["ln_xi"])
    print(_dump(rep))
    return 0


def cmd_theory_mgf(args) -> int:
    spec = theory.MgfSpec(args.d, args.delta, args.scale, 1 if args.sign == "+" else -1)
    if args.method == "quadrature":
        val = theory.mgf_quadrature(spec)
    elif args.method == "asymptotic":
        val = theory.mgf_asymptotic(spec)
    else:
        val = theory.mgf_monte_carlo(spec, args.samples, RandomSeed(args.seed))
    print(f"{val:.17g}")
    return 0


def cmd_phase(args) -> int:
    config = bench.load_config(args.config)
    out = Path(args.out)
    done = bench.resume_columns(config, out) if args.resume else {}
    finished = dict(done)

    def flush(ai, cells):
        finished[ai] = cells
        partial = [c for col in finished.values() for c in col]
        bench.emit_csv(bench.PhaseDiagram(config, partial), out)

    diagram = bench.run_phase_experiment(config, workers=args.workers, done_columns=done,
                                         on_column=flush)
    bench.emit_csv(diagram, out)
    return 0


def cmd_table1(args) -> int:
    base = bench.table1_base_config(seed=args.seed, trials=args.trials)
    report = bench.table1_report(base_config=base, workers=args.workers)
    Path(args.out).write_text(report.to_csv())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blocksparse",
                                description="Block-sparse recovery by mixed l2/l1 minimisation.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="recover a signal from y = A x")
    s.add_argument("--matrix", required=True)
    s.add_argument("--measurements", required=True)
    s.add_argument("--block-size", type=int, required=True)
    s.add_argument("--sparsity", type=int)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--tol", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("certify", help="null-space condition and equivalence checks")
    for name in ("n", "d", "m", "k", "samples"):
        c.add_argument(f"--{name}", type=int, required=True)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--mode", choices=["montecarlo", "equivalence", "oracle"], default="montecarlo")
    c.set_defaults(func=cmd_certify)

    t = sub.add_parser("theory", help="closed-form bounds and MGFs")
    tsub = t.add_subparsers(dest="theory_command", required=True)
    b = tsub.add_parser("bound")
    b.add_argument("--alpha", type=float, required=True)
    b.add_argument("--beta", type=float, required=True)
    b.add_argument("--eps", type=float, required=True)
    b.add_argument("--delta", type=float, required=True)
    b.add_argument("--eta", type=float, required=True)
    b.add_argument("--d", type=int)
    b.add_argument("--cover-dim", type=int, default=10**6,
                   help="covering dimension, only used when eta < sqrt(2)")
    b.set_defaults(func=cmd_theory_bound)
    g = tsub.add_parser("mgf")
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--delta", type=float, required=True)
    g.add_argument("--scale", type=float, required=True)
    g.add_argument("--sign", choices=["+", "-"], required=True)
    g.add_argument("--method", choices=["quadrature", "asymptotic", "montecarlo"],
                   default="quadrature")
    g.add_argument("--samples", type=int, default=10**6)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_theory_mgf)

    ph = sub.add_parser("phase", help="run a phase-transition experiment")
    ph.add_argument("--config", required=True)
    ph.add_argument("--out", required=True)
    ph.add_argument("--workers", type=int, default=1)
    ph.add_argument("--resume", action="store_true",
                    help="skip alpha columns already complete in --out")
    ph.set_defaults(func=cmd_phase)

    tb = sub.add_parser("table1", help="four-block-length threshold sweep")
    tb.add_argument("--out", required=True)
    tb.add_argument("--trials", type=int, default=100)
    tb.add_argument("--seed", type=int, default=2024)
    tb.add_argument("--workers", type=int, default=1)
    tb.set_defaults(func=cmd_table1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
