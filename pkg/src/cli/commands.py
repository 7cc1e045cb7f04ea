# fictitious-lq/src/cli/commands.py
"""
Subcommand handlers.

Each handler takes the parsed argparse namespace, does its work and returns the
process exit status: 0 on success, 2 when solvability or existence fails, 1 on
input errors (mapped in run_command).
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from src.cli.fixtures import write_fixtures
from src.cli.loader import ConfigError, LoadedConfig, parse_config
from src.config import CSV_FLOAT_FORMAT, config
from src.evaluate.moments import EvaluationError, expected_tail_costs
from src.evaluate.montecarlo import monte_carlo_tail_cost
from src.evaluate.oracle import compare_with_law, tree_oracle_equilibrium
from src.evaluate.sweep import SweepResult, lq_solver, mv_sweep, sweep
from src.game.equilibrium import (
    EquilibriumLaw,
    adjoint_closed_form_gap,
    check_pointwise_ranges,
    solve_on_tree,
    stationarity_residual,
    synthesize_law,
    verify_equilibrium_inequalities,
)
from src.game.model import GLQProblem
from src.game.riccati import (
    ConvexityBundle,
    RecursionForm,
    RiccatiBundle,
    SolvabilityReport,
    backward_pass,
    check_solvability,
    convexity_pass,
    convexity_range_check,
)
from src.game.tree import TreeInvalidError, build_tree
from src.selfcoord.fictitious import Punishment, PunishmentError, augment, self_coordination
from src.selfcoord.meanvar import (
    ExistenceUnverifiedError,
    MarketDataError,
    MVRiccati,
    build_mv,
    mv_backward,
    mv_control,
    mv_lq_problem,
    structural_checks,
)
from src.utils.grids import GridSpecError, parse_grid, parse_index_list

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_UNSOLVABLE = 2

RANGE_SAMPLES = 20
VERIFY_ATOL = 1e-8


@dataclass
class GameRun:
    """A config reduced to one generic game solve from (t, y)."""
    problem: GLQProblem
    t: int
    y: np.ndarray
    bundle: RiccatiBundle
    convexity: ConvexityBundle
    report: SolvabilityReport
    law: EquilibriumLaw


# ============== Option helpers ==============

def _load(args) -> LoadedConfig:
    if not args.config:
        raise ConfigError(["--config: required for this subcommand"])
    loaded = parse_config(args.config)
    if args.tol_rank is not None:
        loaded.tolerances = loaded.tolerances.with_overrides(rank_rtol=args.tol_rank)
    if args.t is not None:
        if not 0 <= args.t < loaded.N:
            raise ConfigError([f"--t: must lie in [0, {loaded.N - 1}]"])
        loaded.t = args.t
    return loaded


def _output_dir(args) -> Path:
    out = Path(args.output or config.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, loaded: LoadedConfig) -> int:
    if args.seed is not None:
        return args.seed
    if loaded.evaluation.seed is not None:
        return loaded.evaluation.seed
    return config.run.seed


def _ks(args, loaded: LoadedConfig) -> List[int]:
    ks = parse_index_list(args.k) if args.k is not None else list(loaded.evaluation.k)
    bad = [k for k in ks if not loaded.t <= k <= loaded.N]
    if bad:
        raise ConfigError([f"--k: stages {bad} outside [{loaded.t}, {loaded.N}]"])
    return ks


def _literal(args, loaded: LoadedConfig) -> bool:
    return bool(args.literal_upsilon or loaded.document.literal_upsilon)


def _form(args, loaded: LoadedConfig) -> RecursionForm:
    return RecursionForm(args.recursion or loaded.document.recursion)


def _punishment(args, loaded: LoadedConfig) -> Optional[Punishment]:
    punish = loaded.punishment
    if punish is not None and args.mu is not None:
        punish = punish.with_mu(args.mu)
    return punish


def _game(args, loaded: LoadedConfig) -> GameRun:
    """Generic two-player solve for any config kind."""
    tol = loaded.tolerances
    if loaded.kind == "glq":
        problem, y = loaded.glq, loaded.x
    elif loaded.kind == "lq":
        problem = augment(loaded.lq, _punishment(args, loaded), _literal(args, loaded))
        y = np.concatenate([loaded.x, loaded.x])
    else:
        problem = build_mv(loaded.market, _punishment(args, loaded))
        y = np.array([loaded.z, loaded.z])
    bundle = backward_pass(problem, loaded.t, tol, _form(args, loaded))
    cb = convexity_pass(problem, loaded.t, tol)
    report = check_solvability(bundle, cb, tol)
    law = synthesize_law(problem, bundle, y)
    return GameRun(problem=problem, t=loaded.t, y=y, bundle=bundle, convexity=cb, report=report, law=law)


def _print_verdict(report: SolvabilityReport) -> None:
    print(f"verdict: {report.verdict.value}")
    for k, failures in report.failing_stages().items():
        print(f"  stage {k}: {', '.join(failures)}")


# ============== CSV frames ==============

def _matrix_records(name: str, t: int, k: int, l: Optional[int], value) -> List[Dict]:
    arr = np.atleast_2d(np.asarray(value, dtype=np.float64))
    if np.ndim(value) == 1:
        arr = arr.T
    return [{"name": name, "t": t, "k": k, "l": l, "row": i, "col": j, "value": float(arr[i, j])}
            for i in range(arr.shape[0]) for j in range(arr.shape[1])]


def bundle_frame(bundle: RiccatiBundle, cb: Optional[ConvexityBundle] = None) -> pd.DataFrame:
    """Every bundle entry in long form: name, t, k, l, row, col, value."""
    t = bundle.t
    records: List[Dict] = []
    for name in ("P", "Pcal", "sigma"):
        for k, value in sorted(getattr(bundle, name).items()):
            records += _matrix_records(name, t, k, None, value)
    for name in ("T", "Tcal", "Ttil", "xi"):
        for (k, l), value in sorted(getattr(bundle, name).items()):
            records += _matrix_records(name, t, k, l, value)
    for k, s in sorted(bundle.stages.items()):
        for name in ("W", "Wt", "H", "Ht", "h", "K", "Kbar", "c"):
            records += _matrix_records(name, t, k, None, getattr(s, name))
    if cb is not None:
        for name in ("U", "Ucal", "M", "Mcal", "O", "Ocal", "OO"):
            for k, value in sorted(getattr(cb, name).items()):
                records += _matrix_records(name, t, k, None, value)
        for name in ("V", "Vcal"):
            for (k, l), value in sorted(getattr(cb, name).items()):
                records += _matrix_records(name, t, k, l, value)
    return pd.DataFrame.from_records(records, columns=["name", "t", "k", "l", "row", "col", "value"])


def mv_bundle_frame(r: MVRiccati, t: int) -> pd.DataFrame:
    records: List[Dict] = []
    for k, value in sorted(r.P11.items()):
        records += _matrix_records("Pbar11", t, k, None, value)
    for k, value in sorted(r.Tbar.items()):
        records += _matrix_records("Tbar", t, k, None, value)
    for name in ("W", "Wt", "H1", "h"):
        for k, value in sorted(getattr(r, name).items()):
            records += _matrix_records(name, t, k, None, value)
    return pd.DataFrame.from_records(records, columns=["name", "t", "k", "l", "row", "col", "value"])


def gains_frame(law: EquilibriumLaw, m1: int) -> pd.DataFrame:
    """Per-stage gains of both players: policy, k, gain, row, col, value."""
    records = []
    players = (("precommit", slice(0, m1)), ("selfcoord", slice(m1, None)))
    for k in sorted(law.Kdev):
        for policy, rows in players:
            for gain, value in (("Kdev", law.Kdev[k][rows]), ("Kbar", law.Kbar[k][rows]),
                                ("c", law.c[k][rows][:, None])):
                for i in range(value.shape[0]):
                    for j in range(value.shape[1]):
                        records.append({"policy": policy, "k": k, "gain": gain, "row": i, "col": j,
                                        "value": float(value[i, j])})
    return pd.DataFrame.from_records(records, columns=["policy", "k", "gain", "row", "col", "value"])


def _write(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info(f"Wrote {path}")
    return path


def emit_plotdata(result: SweepResult, out_dir) -> List[Path]:
    """Two-column (mu, value) files per k plus constant baseline files."""
    if not result.ks:
        logger.warning("emit_plotdata: no stages requested, nothing written")
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    span = [float(result.grid[0]), float(result.grid[-1])] if result.grid.size else []
    paths = []
    for k in result.ks:
        curves = {
            f"curve_k{k}.dat": pd.DataFrame({"mu": result.grid, "value": result.values(k)}),
            f"precommit_k{k}.dat": pd.DataFrame({"mu": span, "value": [result.precommit.get(k, np.nan)] * len(span)}),
            f"timeconsistent_k{k}.dat": pd.DataFrame(
                {"mu": span, "value": [result.timeconsistent.get(k, np.nan)] * len(span)}),
        }
        for name, frame in curves.items():
            path = out / name
            frame.to_csv(path, sep=" ", header=False, index=False, float_format=CSV_FLOAT_FORMAT)
            paths.append(path)
    logger.info(f"Wrote {len(paths)} plot-data files to {out}")
    return paths


# ============== Subcommands ==============

def cmd_solve(args) -> int:
    loaded = _load(args)
    out = _output_dir(args)
    tol = loaded.tolerances

    if loaded.kind == "mv":
        punish = _punishment(args, loaded)
        r = mv_backward(loaded.market, punish, tol, _form(args, loaded))
        control = mv_control(r, loaded.market, loaded.t, loaded.z, tol)
        _write(gains_frame(control.law, loaded.market.p0), out / "gains.csv")
        if args.dump_bundle:
            _write(mv_bundle_frame(r, loaded.t), out / "bundle.csv")
        structure = structural_checks(r, loaded.market, tol)
        for violation in structure.violations:
            print(f"structure: {violation}")
        run = _game(args, loaded)
        _print_verdict(run.report)
        return EXIT_OK if run.report.ok else EXIT_UNSOLVABLE

    run = _game(args, loaded)
    _write(gains_frame(run.law, run.problem.m1), out / "gains.csv")
    if args.dump_bundle:
        _write(bundle_frame(run.bundle, run.convexity), out / "bundle.csv")
    _print_verdict(run.report)
    if loaded.kind == "lq" and loaded.evaluation.k:
        values = expected_tail_costs(loaded.lq, run.law, _ks(args, loaded))
        for k, value in values.items():
            print(f"V_{k} = {value:.10g}")
    return EXIT_OK if run.report.ok else EXIT_UNSOLVABLE


def cmd_sweep(args) -> int:
    loaded = _load(args)
    if loaded.kind == "glq":
        raise ConfigError(["kind: sweep needs an 'lq' or 'mv' config"])
    out = _output_dir(args)
    grid = parse_grid(args.mu_grid or loaded.evaluation.grid, config.run.grid_max_mu)
    ks = _ks(args, loaded)
    threads = args.threads or config.run.threads
    psis = loaded.punishment.psis

    if loaded.kind == "mv":
        result = mv_sweep(loaded.market, grid, ks, loaded.z, phis=psis, t=loaded.t, threads=threads,
                          tol=loaded.tolerances, form=_form(args, loaded))
    else:
        solve = lq_solver(loaded.lq, psis, loaded.t, loaded.x, _literal(args, loaded), loaded.tolerances,
                          _form(args, loaded))
        result = sweep(loaded.lq, solve, grid, ks, threads)

    result.write_csv(str(out))
    emit_plotdata(result, out / "plotdata")
    for k in result.ks:
        mu_star, v_min = result.argmin(k)
        print(f"k={k}: min V = {v_min:.6f} at mu = {mu_star:.6g} "
              f"(precommit {result.precommit[k]:.6f}, time-consistent {result.timeconsistent[k]:.6f})")
    if result.failures:
        print(f"{len(result.failures)} of {grid.size} grid points failed")
    return EXIT_OK if len(result.failures) < len(result.rows) else EXIT_UNSOLVABLE


def cmd_verify(args) -> int:
    loaded = _load(args)
    out = _output_dir(args)
    run = _game(args, loaded)
    tree = build_tree(run.problem.noise, run.t, run.problem.N)
    ts = solve_on_tree(run.problem, run.law, tree)
    seed = _seed(args, loaded)

    residuals = stationarity_residual(run.problem, ts)
    adjoint_gap = adjoint_closed_form_gap(run.bundle, ts)
    inequalities = verify_equilibrium_inequalities(run.problem, ts, loaded.evaluation.directions, seed)
    ranges = check_pointwise_ranges(run.problem, run.bundle, run.law, tree, loaded.tolerances)
    convexity = convexity_range_check(run.problem, run.convexity, tree, RANGE_SAMPLES, seed, loaded.tolerances)

    records = [{"check": "stationarity_p1", "k": k, "value": r1} for k, (r1, _) in residuals.items()]
    records += [{"check": "stationarity_p2", "k": k, "value": r2} for k, (_, r2) in residuals.items()]
    records += [
        {"check": "adjoint_gap", "k": None, "value": adjoint_gap},
        {"check": "first_order_p1", "k": None, "value": inequalities.first_order_p1},
        {"check": "second_order_p1", "k": None, "value": inequalities.second_order_p1},
        {"check": "pairing_gap_p1", "k": None, "value": inequalities.pairing_gap_p1},
        {"check": "first_order_p2", "k": None, "value": inequalities.first_order_p2},
        {"check": "second_order_p2", "k": None, "value": inequalities.second_order_p2},
        {"check": "convexity_range_pass", "k": None, "value": convexity.passed / max(convexity.samples, 1)},
    ]
    _write(pd.DataFrame.from_records(records, columns=["check", "k", "value"]), out / "verify.csv")

    worst = max((max(pair) for pair in residuals.values()), default=0.0)
    print(f"max stationarity residual: {worst:.3e}")
    print(f"adjoint closed-form gap: {adjoint_gap:.3e}")
    for violation in inequalities.violations:
        print(f"inequality: {violation}")
    if not ranges.ok:
        print(f"pointwise ranges fail: mean stages {ranges.mean_failures}, "
              f"node stages {sorted(ranges.node_failures)}")
    if not convexity.ok:
        print(f"convexity ranges: {convexity.passed}/{convexity.samples} samples pass")
    _print_verdict(run.report)

    passed = (worst <= VERIFY_ATOL and adjoint_gap <= VERIFY_ATOL and inequalities.ok
              and ranges.ok and run.report.ok)
    return EXIT_OK if passed else EXIT_UNSOLVABLE


def cmd_oracle(args) -> int:
    loaded = _load(args)
    run = _game(args, loaded)
    tree = build_tree(run.problem.noise, run.t, run.problem.N)
    result = tree_oracle_equilibrium(run.problem, run.t, run.y, tree, loaded.tolerances)
    _print_verdict(run.report)
    if result.is_error:
        print(f"oracle: {result.error}")
        return EXIT_UNSOLVABLE if result.residual > 0 else EXIT_INPUT
    gap = compare_with_law(run.problem, run.law, result, tree)
    print(f"oracle unknowns: {result.unknowns}, residual {result.residual:.3e}")
    print(f"max node gap to the Riccati law: {gap:.3e}")
    return EXIT_OK if gap <= VERIFY_ATOL else EXIT_UNSOLVABLE


def cmd_mc(args) -> int:
    loaded = _load(args)
    if loaded.kind == "glq":
        raise ConfigError(["kind: mc needs an 'lq' or 'mv' config"])
    out = _output_dir(args)
    ks = _ks(args, loaded)
    paths = args.paths or loaded.evaluation.paths
    seed = _seed(args, loaded)

    if loaded.kind == "mv":
        lq = mv_lq_problem(loaded.market)
        r = mv_backward(loaded.market, _punishment(args, loaded), loaded.tolerances, _form(args, loaded))
        solution = mv_control(r, loaded.market, loaded.t, loaded.z, loaded.tolerances)
    else:
        lq = loaded.lq
        solution = self_coordination(lq, _punishment(args, loaded), loaded.t, loaded.x,
                                     _literal(args, loaded), check=False, tol=loaded.tolerances,
                                     form=_form(args, loaded))

    exact = expected_tail_costs(lq, solution, ks)
    records = []
    for k in ks:
        estimate, stderr = monte_carlo_tail_cost(lq, solution, k, paths, seed=seed, threads=args.threads)
        score = (estimate - exact[k]) / stderr if stderr > 0 else 0.0
        records.append({"k": k, "exact": exact[k], "estimate": estimate, "stderr": stderr, "z": score})
        print(f"k={k}: exact {exact[k]:.6f}, MC {estimate:.6f} +/- {stderr:.2e} (z = {score:+.2f})")
    _write(pd.DataFrame.from_records(records, columns=["k", "exact", "estimate", "stderr", "z"]),
           out / "mc.csv")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    for path in write_fixtures(args.output or "fixtures"):
        print(path)
    return EXIT_OK


COMMANDS: Dict[str, Callable] = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "oracle": cmd_oracle,
    "mc": cmd_mc,
    "fixtures": cmd_fixtures,
}


def run_command(name: str, args) -> int:
    """Dispatch a subcommand and map exceptions to exit codes."""
    try:
        return COMMANDS[name](args)
    except ConfigError as e:
        for error in e.errors:
            print(f"error: {error}")
        return EXIT_INPUT
    except (FileNotFoundError, GridSpecError, PunishmentError, MarketDataError,
            TreeInvalidError, EvaluationError) as e:
        print(f"error: {e}")
        return EXIT_INPUT
    except ExistenceUnverifiedError as e:
        print(f"existence unverified: {e}")
        return EXIT_UNSOLVABLE
