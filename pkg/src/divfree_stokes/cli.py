"""Command line entry point ``divfree-stokes``.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
``DFS_THREADS`` caps the BLAS/OpenMP thread pools.
"""
import argparse
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from .mesh import MeshError, generate_lshape, generate_square, coarse_lshape, coarse_square, refine_levels, save_mesh
from .solver import SolverError
from .study import ConfigError, StudyConfig, emit, run_convergence_study, run_precond_study

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

log = logging.getLogger("divfree_stokes")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_study_args(p, tol_default):
    p.add_argument("--domain", choices=["square", "lshape"], default="square")
    p.add_argument("--levels", type=int, required=True, help="refinement levels beyond the coarse mesh")
    p.add_argument("--nu", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=6.0)
    p.add_argument("--tol", type=float, default=tol_default, help="PCG relative residual tolerance")
    p.add_argument("--maxit", type=int, default=500)
    p.add_argument("--coarse-n", type=int, default=None, help="use a plain n x n coarse grid")
    p.add_argument("--format", choices=["csv", "markdown", "json"], default=None)
    p.add_argument("--out", default=None, help="report path (format from extension); stdout if omitted")


def build_parser():
    parser = _Parser(prog="divfree-stokes", description="Divergence-free DG Stokes studies.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    conv = sub.add_parser("convergence", help="convergence-order study")
    _add_study_args(conv, None)
    conv.add_argument("--load", choices=["manufactured", "fixed"], default="manufactured")
    conv.add_argument("--inner", choices=["auto", "direct", "amg"], default="auto")

    pre = sub.add_parser("precond", help="preconditioner study")
    _add_study_args(pre, 1e-6)
    pre.add_argument("--load", choices=["manufactured", "fixed"], default="manufactured")
    pre.add_argument("--inner", choices=["direct", "amg"], default="direct")

    mesh = sub.add_parser("mesh", help="generate and refine a mesh")
    mesh.add_argument("--gen", choices=["square", "lshape"], required=True)
    mesh.add_argument("--n", type=int, default=None, help="grid size; default is the built-in coarse mesh")
    mesh.add_argument("--refine", type=int, default=0)
    mesh.add_argument("--out", required=True)
    return parser


def _study(args, runner):
    cfg = StudyConfig(
        domain=args.domain,
        levels=args.levels,
        load=args.load,
        nu=args.nu,
        alpha=args.alpha,
        tol=args.tol,
        maxit=args.maxit,
        coarse_n=args.coarse_n,
        inner=args.inner,
    )
    report = runner(cfg)
    fmt = args.format
    if args.out is None:
        sys.stdout.write(emit(report, fmt or "markdown"))
    else:
        emit(report, fmt, args.out)
    failed = [r for r in report.records if r.failure]
    if failed:
        log.error("level %d failed: %s", failed[0].level, failed[0].failure)
        return EXIT_SOLVER
    return EXIT_OK


def _mesh(args):
    if args.refine < 0:
        raise ConfigError("--refine must be >= 0")
    if args.n is None:
        m = coarse_square() if args.gen == "square" else coarse_lshape()
    else:
        m = generate_square(args.n) if args.gen == "square" else generate_lshape(args.n)
    m = refine_levels(m, args.refine)[-1]
    save_mesh(m, args.out)
    print(f"{args.out}: {m.n_vertices} vertices, {m.n_edges} edges, {m.n_triangles} triangles")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = os.environ.get("DFS_THREADS")
    try:
        limit = int(threads) if threads else None
        if limit is not None and limit < 1:
            raise ValueError
    except ValueError:
        print(f"divfree-stokes: invalid DFS_THREADS={threads!r}", file=sys.stderr)
        return EXIT_CONFIG
    with threadpool_limits(limits=limit):
        try:
            if args.command == "mesh":
                return _mesh(args)
            runner = run_convergence_study if args.command == "convergence" else run_precond_study
            return _study(args, runner)
        except (ConfigError, MeshError, ValueError) as exc:
            print(f"divfree-stokes: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except SolverError as exc:
            print(f"divfree-stokes: solver failure: {exc}", file=sys.stderr)
            return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
