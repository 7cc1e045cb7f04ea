# fictitious-lq/src/cli/app.py
"""Argument parser for the command-line front end."""
import argparse
from typing import List, Optional

DESCRIPTION = "Fictitious-game solver for time-inconsistent stochastic LQ control"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON problem document")
    parser.add_argument("--t", type=int, help="initial time (overrides the document)")
    parser.add_argument("--output", help="output directory (default: FLQ_OUTPUT_DIR or 'out')")
    parser.add_argument("--tol-rank", dest="tol_rank", type=float,
                        help="relative singular-value cutoff of the pseudoinverse")
    parser.add_argument("--literal-upsilon", dest="literal_upsilon", action="store_true",
                        help="use the all-plus punishment block [[Psi, Psi], [Psi, Psi]]")
    parser.add_argument("--recursion", choices=["general", "symmetric"],
                        help="gain-term closure of the value recursions (default: general)")
    parser.add_argument("--seed", type=int, help="random seed for sampled checks and Monte-Carlo")
    parser.add_argument("--k", help="comma-separated evaluation stages, e.g. 0,1,2,3")
    parser.add_argument("--threads", type=int, help="worker threads (default: machine parallelism)")
    parser.add_argument("--paths", type=int, help="Monte-Carlo path count")
    mu = parser.add_mutually_exclusive_group()
    mu.add_argument("--mu", type=float, help="constant punishment intensity")
    mu.add_argument("--mu-grid", "--grid", dest="mu_grid",
                    help="grid spec: paper (alias multiscale), list:[...], linspace:a,b,n or logspace:a,b,n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fictitious-lq", description=DESCRIPTION)
    parser.set_defaults(dump_bundle=False)
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="solve and write per-stage gains with the solvability verdict")
    _add_common(solve)
    solve.add_argument("--dump-bundle", dest="dump_bundle", action="store_true",
                       help="also write every Riccati and convexity entry as long CSV")

    for name, text in (
        ("sweep", "evaluate V_k over a punishment grid"),
        ("verify", "tree residuals, equilibrium inequalities and adjoint closed forms"),
        ("oracle", "brute-force tree equilibrium against the Riccati law"),
        ("mc", "Monte-Carlo cross-check of the exact tail objectives"),
        ("fixtures", "write the bundled problem documents"),
    ):
        _add_common(sub.add_parser(name, help=text))
    return parser


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)
