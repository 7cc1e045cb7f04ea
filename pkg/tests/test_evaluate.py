import dataclasses

import numpy as np
import pandas as pd
import pytest

from src.evaluate.montecarlo import monte_carlo_tail_cost
from src.evaluate.moments import (
    EvaluationError,
    expected_tail_cost,
    expected_tail_costs,
    precommit_baseline,
)
from src.evaluate.oracle import compare_with_law, tree_oracle_equilibrium
from src.evaluate.sweep import SweepResult, SweepRow, lq_solver, sweep
from src.game.equilibrium import simulate_law, synthesize_law
from src.game.model import stationary_lift
from src.game.riccati import backward_pass
from src.game.tree import build_tree, tree_cost
from src.selfcoord.fictitious import Punishment, augment, self_coordination
from src.selfcoord.meanvar import build_mv, mv_backward, mv_control, mv_lq_problem, mv_punishment

from conftest import random_glq, scalar_lq

ORACLE_ATOL = 1e-8


def _scalar_solution(mu: float = 0.0, N: int = 1):
    lq = scalar_lq(N)
    return lq, self_coordination(lq, Punishment.constant(mu, [[1.0]], N), 0, [1.0])


def test_scalar_tail_costs():
    lq, solution = _scalar_solution()
    values = expected_tail_costs(lq, solution, [1, 0])
    assert values[0] == pytest.approx(0.5)
    assert values[1] == pytest.approx(0.25)
    assert precommit_baseline(lq, solution, 0) == pytest.approx(0.5)


def test_evaluation_rejects_bad_requests():
    lq, solution = _scalar_solution()
    with pytest.raises(EvaluationError):
        expected_tail_cost(lq, solution, 2)
    with pytest.raises(EvaluationError):
        expected_tail_cost(lq, solution, 0, policy="greedy")
    with pytest.raises(EvaluationError):
        expected_tail_cost(lq, object(), 0)
    with pytest.raises(EvaluationError):
        monte_carlo_tail_cost(lq, solution, 0, paths=1)
    with pytest.raises(EvaluationError):
        monte_carlo_tail_cost(lq, solution, 3, paths=10)


def test_monte_carlo_on_noiseless_problem_is_exact():
    lq, solution = _scalar_solution()
    estimate, stderr = monte_carlo_tail_cost(lq, solution, 0, paths=10, seed=1)
    assert estimate == pytest.approx(0.5)
    assert stderr == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("k", [0, 2])
def test_monte_carlo_agrees_with_moments(example41_lq, k):
    solution = self_coordination(example41_lq, Punishment.constant(0.5, [[1.0]], 4), 0, [0.5, 0.5],
                                 check=False)
    exact = expected_tail_cost(example41_lq, solution, k)
    estimate, stderr = monte_carlo_tail_cost(example41_lq, solution, k, paths=20_000, seed=3)
    assert stderr > 0
    assert abs(estimate - exact) <= 4.0 * stderr


def test_monte_carlo_gaussian_sampler(example41_lq):
    solution = self_coordination(example41_lq, Punishment.constant(0.0, [[1.0]], 4), 0, [0.5, 0.5],
                                 check=False)
    exact = expected_tail_cost(example41_lq, solution, 1, policy="precommit")
    estimate, stderr = monte_carlo_tail_cost(example41_lq, solution, 1, paths=20_000, seed=5,
                                             sampler_kind="gaussian", policy="precommit")
    assert abs(estimate - exact) <= 4.0 * stderr


def test_monte_carlo_is_independent_of_thread_count(example41_lq):
    solution = self_coordination(example41_lq, Punishment.constant(0.5, [[1.0]], 4), 0, [0.5, 0.5],
                                 check=False)
    one = monte_carlo_tail_cost(example41_lq, solution, 0, paths=5_000, seed=9, threads=1, chunk=1_000)
    many = monte_carlo_tail_cost(example41_lq, solution, 0, paths=5_000, seed=9, threads=4, chunk=1_000)
    assert one == many


@pytest.mark.parametrize("seed", range(20))
def test_oracle_matches_the_synthesized_law(seed):
    problem = random_glq(seed)
    y = np.array([1.0])
    law = synthesize_law(problem, backward_pass(problem, 0), y)
    tree = build_tree(problem.noise, 0, problem.N)
    result = tree_oracle_equilibrium(problem, 0, y, tree)
    assert not result.is_error, result.error
    assert result.unknowns == 6
    assert compare_with_law(problem, law, result, tree) <= ORACLE_ATOL


def test_oracle_on_scalar_game(scalar_game):
    result = tree_oracle_equilibrium(scalar_game, 0, [1.0])
    assert result.unknowns == 2
    np.testing.assert_allclose(result.root_control(), [-1 / 3, -1 / 3], atol=1e-12)


def test_oracle_refuses_large_trees(example42_market):
    problem = build_mv(example42_market, mv_punishment(example42_market, [0.0] * 4))
    result = tree_oracle_equilibrium(problem, 0, [10.0, 10.0])
    assert result.is_error
    assert result.unknowns > 400
    with pytest.raises(ValueError):
        compare_with_law(problem, None, result)


def test_sweep_copies_the_zero_row_into_the_time_consistent_baseline():
    lq = scalar_lq(2)
    result = sweep(lq, lq_solver(lq, [np.eye(1)] * 2, 0, [1.0]), [1.0, 0.0, 0.5], [0, 1], threads=2)
    assert result.grid.tolist() == [0.0, 0.5, 1.0]
    assert [row.mu for row in result.rows] == [0.0, 0.5, 1.0]
    assert result.timeconsistent == result.rows[0].values
    assert result.precommit[0] <= result.timeconsistent[0] + 1e-12
    assert not result.failures


def test_sweep_rejects_negative_grid():
    lq = scalar_lq(1)
    with pytest.raises(ValueError):
        sweep(lq, lq_solver(lq, [np.eye(1)], 0, [1.0]), [-0.1, 0.0], [0])


def test_argmin_ties_and_failures():
    rows = [SweepRow(mu=0.0, values={0: 2.0}), SweepRow.from_error(0.1, "singular"),
            SweepRow(mu=0.2, values={0: 1.0}), SweepRow(mu=0.3, values={0: 1.0})]
    result = SweepResult(grid=np.array([0.0, 0.1, 0.2, 0.3]), ks=[0], rows=rows)
    assert result.argmin(0) == (0.2, 1.0)
    assert np.isnan(result.values(0)[1])
    assert len(result.failures) == 1
    empty = SweepResult(grid=np.array([0.1]), ks=[0], rows=[SweepRow.from_error(0.1, "x")])
    assert all(np.isnan(v) for v in empty.argmin(0))


def test_sweep_csv_layout(tmp_path):
    lq = scalar_lq(1)
    result = sweep(lq, lq_solver(lq, [np.eye(1)], 0, [1.0]), [0.0, 1.0], [0, 1], threads=1)
    values_path, summary_path = result.write_csv(str(tmp_path))
    values = pd.read_csv(values_path)
    summary = pd.read_csv(summary_path)
    assert list(values.columns) == ["mu", "k", "policy", "value"]
    assert set(values["policy"]) == {"selfcoord", "precommit", "timeconsistent"}
    assert len(values) == 2 * 2 + 2 * 2
    assert list(summary.columns) == ["k", "argmin_mu", "min_value", "precommit", "timeconsistent"]
    assert summary.loc[summary["k"] == 0, "min_value"].iloc[0] == pytest.approx(0.5, abs=1e-9)


def test_double_indexed_weights_stop_before_the_terminal_stage():
    lq, solution = _scalar_solution()
    lifted = dataclasses.replace(lq, weights=stationary_lift(lq.weights))
    assert expected_tail_cost(lifted, solution, 0) == pytest.approx(0.5)
    with pytest.raises(EvaluationError):
        expected_tail_cost(lifted, solution, 1)
    with pytest.raises(EvaluationError):
        monte_carlo_tail_cost(lifted, solution, 1, 100, seed=0)


def test_sweep_keeps_rows_when_the_baselines_fail():
    lq = scalar_lq(1)
    inner = lq_solver(lq, [np.eye(1)], 0, [1.0])

    def solve(mu: float):
        if mu == 0.0:
            raise RuntimeError("no solution at mu = 0")
        return inner(mu)

    result = sweep(lq, solve, [0.5, 1.0], [0, 1], threads=1)
    assert not result.failures
    assert result.baseline_error == "no solution at mu = 0"
    assert np.isnan(result.precommit[0]) and np.isnan(result.timeconsistent[1])
    assert result.argmin(0)[0] in (0.5, 1.0)
    summary = result.summary_frame()
    assert summary["precommit"].isna().all()

    with_zero = sweep(lq, solve, [0.0, 0.5], [0], threads=1)
    assert len(with_zero.failures) == 1
    assert np.isnan(with_zero.timeconsistent[0])


@pytest.mark.parametrize("mu", [0.0, 0.5])
def test_exact_tail_costs_match_the_tree_expectation(example41_lq, mu):
    lq = example41_lq
    solution = self_coordination(lq, Punishment.constant(mu, [[1.0]], 4), 0, [0.5, 0.5], check=False)
    # player 2's unpunished cost is the storage objective on the real state
    objective = augment(lq, Punishment.constant(0.0, [[1.0]], 4)).cost2
    tree = build_tree(lq.noise, 0, lq.N)
    states, controls = simulate_law(solution.problem, solution.law, tree)
    exact = expected_tail_costs(lq, solution, range(lq.N))
    for k in range(lq.N):
        node_costs = tree_cost(objective, k, tree, states, controls, from_level=k)
        assert exact[k] == pytest.approx(float(np.mean(node_costs)), abs=1e-10)


def _market_control(md, mu, z=10.0):
    return mv_control(mv_backward(md, mv_punishment(md, [mu] * md.N)), md, 0, z)


@pytest.mark.parametrize("case", ["storage", "market"])
def test_monte_carlo_agrees_with_moments_at_every_stage(example41_lq, example42_market, case):
    if case == "storage":
        lq = example41_lq
        solution = self_coordination(lq, Punishment.constant(0.0, [[1.0]], 4), 0, [0.5, 0.5], check=False)
    else:
        lq = mv_lq_problem(example42_market)
        solution = _market_control(example42_market, 0.06424)
    for k in range(lq.N + 1):
        exact = expected_tail_cost(lq, solution, k)
        estimate, stderr = monte_carlo_tail_cost(lq, solution, k, paths=100_000, seed=31 + k)
        assert abs(estimate - exact) <= 4.0 * stderr + 1e-12, f"stage {k}"


def test_monte_carlo_error_stays_within_four_standard_errors_across_seeds(example41_lq):
    solution = self_coordination(example41_lq, Punishment.constant(0.5, [[1.0]], 4), 0, [0.5, 0.5],
                                 check=False)
    exact = expected_tail_cost(example41_lq, solution, 1)
    within = 0
    for seed in range(20):
        estimate, stderr = monte_carlo_tail_cost(example41_lq, solution, 1, paths=5_000, seed=seed)
        within += abs(estimate - exact) <= 4.0 * stderr
    assert within / 20 >= 0.99
