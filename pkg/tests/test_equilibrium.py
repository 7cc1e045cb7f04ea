import numpy as np
import pytest

from src.game.equilibrium import (
    EquilibriumError,
    adjoint_closed_form_gap,
    check_pointwise_ranges,
    j1_completed_square,
    j1_direct,
    j2_direct,
    simulate_law,
    solve_on_tree,
    stationarity_residual,
    synthesize_law,
    verify_equilibrium_inequalities,
)
from src.game.riccati import RecursionForm, backward_pass, convexity_pass
from src.game.tree import build_tree, propagate, random_controls, tree_cost
from src.selfcoord.fictitious import Punishment, augment

from conftest import random_double_indexed_glq, random_glq

RESIDUAL_ATOL = 1e-8


def _solved(problem, t=0, y=None):
    r = backward_pass(problem, t)
    y = np.ones(problem.n) if y is None else y
    law = synthesize_law(problem, r, y)
    tree = build_tree(problem.noise, t, problem.N)
    return r, law, tree


def test_scalar_law(scalar_game):
    r, law, tree = _solved(scalar_game, y=[1.0])
    np.testing.assert_allclose(law.control(0, np.array([[1.0]])), [[-1 / 3, -1 / 3]])
    assert law.mean_path[1][0] == pytest.approx(1 / 3)
    states, controls = simulate_law(scalar_game, law, tree)
    assert states[1][0, 0] == pytest.approx(1 / 3)


def test_scalar_second_variations(scalar_game):
    tree = build_tree(scalar_game.noise, 0, 1)
    cb = convexity_pass(scalar_game, 0)
    u = [np.array([[1.0]])]
    assert j1_direct(scalar_game, 0, tree, u) == pytest.approx(2.0)
    assert j1_completed_square(scalar_game, cb, 0, tree, u) == pytest.approx(2.0)
    assert j2_direct(scalar_game, 0, tree, np.array([[1.0]]))[0] == pytest.approx(2.0)


def test_law_rejects_wrong_initial_state(scalar_game):
    with pytest.raises(EquilibriumError):
        synthesize_law(scalar_game, backward_pass(scalar_game, 0), [1.0, 2.0])


def test_j2_rejects_stage_outside_tree(scalar_game):
    tree = build_tree(scalar_game.noise, 0, 1)
    with pytest.raises(EquilibriumError):
        j2_direct(scalar_game, 1, tree, np.array([[1.0]]))


@pytest.fixture(params=[0.0, 0.5], ids=["mu0", "mu05"])
def example41_game(request, example41_lq):
    return augment(example41_lq, Punishment.constant(request.param, [[1.0]], 4))


def test_example41_stationarity_and_adjoints(example41_game):
    problem = example41_game
    r, law, tree = _solved(problem, y=np.array([0.5, 0.5, 0.5, 0.5]))
    ts = solve_on_tree(problem, law, tree)
    for k, (r1, r2) in stationarity_residual(problem, ts).items():
        assert r1 <= RESIDUAL_ATOL, f"player 1 residual at stage {k}"
        assert r2 <= RESIDUAL_ATOL, f"player 2 residual at stage {k}"
    assert adjoint_closed_form_gap(r, ts) <= RESIDUAL_ATOL
    for level in range(tree.depth + 1):
        np.testing.assert_allclose(tree.root_mean(ts.states[level], level), law.mean_path[level],
                                   atol=1e-10)


def test_example41_inequalities_and_ranges(example41_game):
    problem = example41_game
    r, law, tree = _solved(problem, y=np.array([0.5, 0.5, 0.5, 0.5]))
    ts = solve_on_tree(problem, law, tree)
    report = verify_equilibrium_inequalities(problem, ts, directions=50, seed=7)
    assert report.ok, report.violations
    assert report.second_order_p1 > 0
    assert report.pairing_gap_p1 < 1e-8
    assert check_pointwise_ranges(problem, r, law, tree).ok


def test_example41_second_variation_forms(example41_game):
    problem = example41_game
    cb = convexity_pass(problem, 0)
    tree = build_tree(problem.noise, 0, 4)
    rng = np.random.default_rng(11)
    for _ in range(50):
        u = random_controls(tree, problem.m1, rng)
        direct = j1_direct(problem, 0, tree, u)
        assert j1_completed_square(problem, cb, 0, tree, u) == pytest.approx(direct, rel=1e-9)
    for k in range(4):
        v = rng.standard_normal((tree.n_nodes(k), problem.m2))
        expected = np.einsum("ri,ij,rj->r", v, cb.OO[k], v)
        np.testing.assert_allclose(j2_direct(problem, k, tree, v), expected, rtol=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_random_game_stationarity_from_later_start(seed):
    problem = random_glq(seed, N=3)
    r, law, tree = _solved(problem, t=1, y=[0.7])
    ts = solve_on_tree(problem, law, tree)
    assert max(max(pair) for pair in stationarity_residual(problem, ts).values()) <= RESIDUAL_ATOL
    assert adjoint_closed_form_gap(r, ts) <= RESIDUAL_ATOL


def test_unpunished_fictitious_rows_are_optimal_from_a_later_start(example41_lq):
    problem = augment(example41_lq, Punishment.constant(0.0, [[1.0]], 4))
    r, law, tree = _solved(problem, t=1, y=np.array([0.5, 0.5, 0.5, 0.5]))
    ts = solve_on_tree(problem, law, tree)
    base = float(tree_cost(problem.cost1, 1, tree, ts.states, ts.controls)[0])
    rng = np.random.default_rng(3)
    for _ in range(100):
        du = random_controls(tree, problem.m1, rng)
        shifted = [U + np.hstack([du[j], np.zeros((tree.n_nodes(j), problem.m2))])
                   for j, U in enumerate(ts.controls)]
        states = propagate(problem, tree, ts.states[0][0], shifted)
        perturbed = float(tree_cost(problem.cost1, 1, tree, states, shifted)[0])
        assert perturbed >= base - 1e-9 * (1.0 + abs(base))


@pytest.mark.parametrize("t", [0, 1])
@pytest.mark.parametrize("seed", range(5))
def test_double_indexed_game_law_is_stationary(seed, t):
    problem = random_double_indexed_glq(seed, N=5)
    r, law, tree = _solved(problem, t=t, y=np.array([0.6, -0.4]))
    ts = solve_on_tree(problem, law, tree)
    for k, (r1, r2) in stationarity_residual(problem, ts).items():
        assert r1 <= RESIDUAL_ATOL, f"player 1 residual at stage {k}"
        assert r2 <= RESIDUAL_ATOL, f"player 2 residual at stage {k}"
    assert adjoint_closed_form_gap(r, ts) <= RESIDUAL_ATOL
    # P and T are not symmetric here, so H^T would not close the value recursions
    assert np.max(np.abs(r.T[(t, t)] - r.T[(t, t)].T)) > 1e-8
    assert np.max(np.abs(r.P[t] - r.P[t].T)) > 1e-8


def test_symmetric_closure_differs_once_values_lose_symmetry():
    problem = random_double_indexed_glq(0, N=5)
    general = backward_pass(problem, 0)
    printed = backward_pass(problem, 0, form=RecursionForm.SYMMETRIC)
    # stage N-1 only sees the symmetric terminal weights
    np.testing.assert_allclose(printed.stage(4).K, general.stage(4).K, atol=1e-12)
    assert np.max(np.abs(printed.stage(0).K - general.stage(0).K)) > 1e-8


def test_zero_punishment_law_is_a_time_consistent_equilibrium(example41_lq):
    problem = augment(example41_lq, Punishment.constant(0.0, [[1.0]], 4))
    r, law, tree = _solved(problem, y=np.full(4, 0.5))
    ts = solve_on_tree(problem, law, tree)
    rng = np.random.default_rng(23)
    for jk in range(tree.depth):
        k = tree.stage(jk)
        base = tree_cost(problem.cost2, k, tree, ts.states, ts.controls, from_level=jk)
        for _ in range(50):
            dv = rng.standard_normal((tree.n_nodes(jk), problem.m2))
            shifted = [U.copy() for U in ts.controls]
            shifted[jk] = shifted[jk] + np.hstack([np.zeros((tree.n_nodes(jk), problem.m1)), dv])
            states = propagate(problem, tree, ts.states[0][0], shifted)
            perturbed = tree_cost(problem.cost2, k, tree, states, shifted, from_level=jk)
            assert np.all(perturbed >= base - 1e-9 * (1.0 + np.abs(base))), f"stage {k}"
