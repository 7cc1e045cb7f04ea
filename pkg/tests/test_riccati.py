import numpy as np
import pytest

from src.cli.fixtures import scalar_n1_document
from src.cli.loader import load_document
from src.game.model import GLQProblem, stationary_cost
from src.game.riccati import (
    NumericalBreakdownError,
    Verdict,
    backward_pass,
    check_solvability,
    convexity_pass,
    convexity_range_check,
    noise_sum,
)
from src.game.tree import build_tree
from src.selfcoord.fictitious import Punishment, augment

from conftest import random_glq


def _scalar_variant(**cost1) -> GLQProblem:
    doc = scalar_n1_document()
    doc["glq"]["cost1"].update(cost1)
    return load_document(doc).glq


def test_scalar_game_blocks(scalar_game):
    r = backward_pass(scalar_game, 0)
    s = r.stage(0)
    np.testing.assert_allclose(s.W, [[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(s.Wt, [[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(s.K, [[-1 / 3], [-1 / 3]])
    np.testing.assert_allclose(s.Kbar, s.K)
    np.testing.assert_allclose(s.c, [0.0, 0.0], atol=1e-15)
    assert r.P[0][0, 0] == pytest.approx(1 / 3)
    assert r.T[(0, 0)][0, 0] == pytest.approx(1 / 3)


def test_scalar_game_convexity(scalar_game):
    cb = convexity_pass(scalar_game, 0)
    assert cb.O[0][0, 0] == pytest.approx(2.0)
    assert cb.Ocal[0][0, 0] == pytest.approx(2.0)
    assert cb.OO[0][0, 0] == pytest.approx(2.0)
    report = check_solvability(backward_pass(scalar_game, 0), cb)
    assert report.verdict is Verdict.SUFFICIENT_UNIQUE
    assert report.ok
    assert report.failing_stages() == {}


def test_concave_player_is_undetermined():
    problem = _scalar_variant(R11=[[-3.0]])
    cb = convexity_pass(problem, 0)
    assert cb.O[0][0, 0] == pytest.approx(-2.0)
    report = check_solvability(backward_pass(problem, 0), cb)
    assert report.verdict is Verdict.UNDETERMINED
    assert not report.ok
    assert "o_psd" in report.failing_stages()[0]


def test_singular_blocks_with_consistent_projections():
    problem = _scalar_variant(R11=[[0.0]], G=[[0.0]])
    r = backward_pass(problem, 0)
    assert np.linalg.matrix_rank(r.stage(0).W) == 1
    report = check_solvability(r, convexity_pass(problem, 0))
    assert report.verdict is Verdict.SUFFICIENT_EXISTS


def test_non_finite_weights_raise_breakdown(scalar_game):
    cost1 = stationary_cost(1, 1, 1, 1, 1, terminal={"G": [[np.inf]]}, R11=[[1.0]])
    problem = GLQProblem(scalar_game.dynamics, scalar_game.noise, cost1, scalar_game.cost2)
    with pytest.raises(NumericalBreakdownError) as err:
        backward_pass(problem, 0)
    assert err.value.stage == 0
    assert err.value.t == 0


def test_initial_time_out_of_range(scalar_game):
    with pytest.raises(ValueError):
        backward_pass(scalar_game, 1)
    with pytest.raises(ValueError):
        convexity_pass(scalar_game, -1)


def test_unbarred_game_has_equal_plain_and_script_families():
    problem = random_glq(3, N=3, barred=False)
    r = backward_pass(problem, 0)
    for k in range(3):
        np.testing.assert_allclose(r.P[k], r.Pcal[k], atol=1e-12)
        np.testing.assert_allclose(r.stage(k).Kbar, r.stage(k).K, atol=1e-12)
        for l in range(k, 3):
            np.testing.assert_allclose(r.T[(k, l)], r.Tcal[(k, l)], atol=1e-12)
            np.testing.assert_allclose(r.Ttil[(k, l)], 0.0, atol=1e-12)


def test_later_initial_time_reuses_terminal_rows():
    problem = random_glq(4, N=3)
    r0, r1 = backward_pass(problem, 0), backward_pass(problem, 1)
    assert set(r1.stages) == {1, 2}
    # stationary costs make player 2's rows independent of the initial time
    np.testing.assert_allclose(r0.T[(2, 2)], r1.T[(2, 2)])
    np.testing.assert_allclose(r0.stage(2).K, r1.stage(2).K)


def test_player_one_value_is_symmetric_without_punishment(example41_lq):
    problem = augment(example41_lq, Punishment.constant(0.0, [[1.0]], 4))
    r = backward_pass(problem, 0)
    for k in range(5):
        np.testing.assert_allclose(r.P[k], r.P[k].T, atol=1e-10)
    assert check_solvability(r, convexity_pass(problem, 0)).ok


def test_noise_sum():
    delta = np.array([[1.0, 0.5], [0.5, 2.0]])
    left = [np.array([[1.0]]), np.array([[2.0]])]
    mid = np.array([[3.0]])
    # 3 * (1 + 0.5*2 + 0.5*2 + 2*4)
    assert noise_sum(delta, left, mid, left)[0, 0] == pytest.approx(33.0)


def test_convexity_ranges_hold_on_sampled_controls(example41_lq):
    problem = augment(example41_lq, Punishment.constant(0.5, [[1.0]], 4))
    cb = convexity_pass(problem, 0)
    report = convexity_range_check(problem, cb, build_tree(problem.noise, 0, 4), samples=5, seed=2)
    assert report.ok, report.failures
    assert report.passed == 5
    with pytest.raises(ValueError):
        convexity_range_check(problem, cb, build_tree(problem.noise, 1, 4), samples=1, seed=2)
