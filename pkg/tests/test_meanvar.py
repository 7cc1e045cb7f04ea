import numpy as np
import pytest

from src.evaluate.moments import expected_tail_cost, precommit_baseline
from src.evaluate.sweep import mv_sweep
from src.game.equilibrium import adjoint_closed_form_gap, solve_on_tree, stationarity_residual, synthesize_law
from src.game.riccati import RecursionForm, backward_pass, convexity_pass
from src.game.tree import build_tree
from src.selfcoord.meanvar import (
    ExistenceUnverifiedError,
    MarketData,
    MarketDataError,
    build_mv,
    cone_fit,
    existence_diagnostics,
    genericity_scan,
    mv_backward,
    mv_control,
    mv_lq_problem,
    mv_punishment,
    structural_checks,
)
from src.utils.numkit import is_psd

from conftest import MARKET_MINIMA, REFERENCE_ATOL


def _control(md, mu, z=1.0, t=0):
    return mv_control(mv_backward(md, mv_punishment(md, [mu] * md.N)), md, t, z)


@pytest.mark.parametrize("mu", [0.0, 0.3, 5.0])
def test_toy_market_positions_do_not_depend_on_mu(toy_market, mu):
    control = _control(toy_market, mu)
    np.testing.assert_allclose(control.law.c[0], [1.25, 1.25])
    np.testing.assert_allclose(control.positions(0, np.array([[1.0, 1.0]])), [[1.25]])
    assert expected_tail_cost(mv_lq_problem(toy_market), control, 0) == pytest.approx(-1.1025)


def test_toy_market_mean_path(toy_market):
    control = _control(toy_market, 0.0)
    np.testing.assert_allclose(control.law.mean_path[1], [1.165, 1.165])


def test_toy_market_precommit_baseline(toy_market):
    control = _control(toy_market, 0.0)
    assert precommit_baseline(mv_lq_problem(toy_market), control, 0) == pytest.approx(-1.1025)


def test_example42_zero_punishment_structure(example42_market):
    md = example42_market
    np.testing.assert_allclose(md.mean_theta(0), [0.122, 0.206, 0.188])
    r = mv_backward(md, mv_punishment(md, [0.0] * 4))
    assert r.Tbar[3][1, 1] == pytest.approx(1.0816)
    assert r.Tbar[2][1, 1] == pytest.approx(1.16985856)
    assert r.Tbar[2][1, 0] == pytest.approx(0.0, abs=1e-12)
    assert all(r.P11[k] > 0 for k in range(5))
    report = structural_checks(r, md)
    assert report.ok, report.violations
    assert report.zero_punishment
    assert report.all_in_cone is False  # identity is not in the Cov / mean cone


def test_reference_intensity_lies_between_the_baselines(example42_market):
    md = example42_market
    lq = mv_lq_problem(md)
    zero = _control(md, 0.0, z=10.0)
    # reference intensity of the reported stage-0 minimum, produced with the H^T closure
    r = mv_backward(md, mv_punishment(md, [0.06424] * 4), form=RecursionForm.SYMMETRIC)
    punished = mv_control(r, md, 0, 10.0)
    for k in range(md.N):
        low, high = sorted((precommit_baseline(lq, zero, k), expected_tail_cost(lq, zero, k)))
        value = expected_tail_cost(lq, punished, k)
        assert low - 1e-9 <= value <= high + 1e-9, f"stage {k}"


def test_generic_market_game_is_stationary_at_the_reference_intensity(example42_market):
    md = example42_market
    problem = build_mv(md, mv_punishment(md, [0.06424] * 4))
    bundle = backward_pass(problem, 0)
    law = synthesize_law(problem, bundle, np.array([10.0, 10.0]))
    ts = solve_on_tree(problem, law, build_tree(problem.noise, 0, md.N))
    for k, (r1, r2) in stationarity_residual(problem, ts).items():
        assert max(r1, r2) <= 1e-8, f"stage {k}"
    assert adjoint_closed_form_gap(bundle, ts) <= 1e-8
    r = mv_backward(md, mv_punishment(md, [0.06424] * 4))
    assert abs(r.Tbar[1][1, 0]) > 1e-8  # Tbar is not symmetric once mu > 0


def test_specialized_recursions_match_the_generic_path(example42_market):
    md = example42_market
    punish = mv_punishment(md, [0.1] * 4)
    r = mv_backward(md, punish)
    bundle = backward_pass(build_mv(md, punish), 0)
    for k in range(4):
        s = bundle.stage(k)
        np.testing.assert_allclose(s.K, r.K(k), atol=1e-10)
        np.testing.assert_allclose(s.Wt, r.Wt[k], atol=1e-12)
        np.testing.assert_allclose(s.c, r.c(k), atol=1e-10)
        np.testing.assert_allclose(bundle.P[k][0, 0], r.P11[k], rtol=1e-10)
        np.testing.assert_allclose(bundle.P[k][1:, :], 0.0, atol=1e-12)
        for l in range(k, 5):
            np.testing.assert_allclose(bundle.T[(0, l)], r.Tbar[l], atol=1e-10)


@pytest.mark.parametrize("mu", [0.0, 0.1, 1.0, 10.0])
def test_market_convexity_blocks_are_psd(example42_market, mu):
    cb = convexity_pass(build_mv(example42_market, mv_punishment(example42_market, [mu] * 4)), 0)
    for k in range(4):
        assert is_psd(cb.O[k]), f"O at stage {k}"
        assert is_psd(cb.Ocal[k]), f"Ocal at stage {k}"
        assert is_psd(cb.OO[k]), f"OO at stage {k}"


def test_degenerate_covariance_fails_existence():
    md = MarketData.constant(N=1, s=1.04, mean_e=[1.14, 1.24], cov_e=[[0.01, 0.01], [0.01, 0.01]], lam=1.0)
    r = mv_backward(md, mv_punishment(md, [0.0]))
    assert existence_diagnostics(r) == {0: ["Wt_projection"]}
    with pytest.raises(ExistenceUnverifiedError) as err:
        mv_control(r, md, 0, 1.0)
    assert err.value.diagnostics == {0: ["Wt_projection"]}


def test_sweep_on_a_degenerate_market_records_the_baseline_failure():
    md = MarketData.constant(N=1, s=1.04, mean_e=[1.14, 1.24], cov_e=[[0.01, 0.01], [0.01, 0.01]], lam=1.0)
    result = mv_sweep(md, [0.5, 1.0], [0], z=1.0)
    assert "Wt_projection" in result.baseline_error
    assert np.isnan(result.precommit[0])
    assert np.isnan(result.timeconsistent[0])
    assert [row.mu for row in result.rows] == [0.5, 1.0]


def test_cone_fit_recovers_coefficients(example42_market):
    md = example42_market
    cov, et = md.cov_theta(0), md.mean_theta(0)
    fit = cone_fit(2.0 * cov + 3.0 * np.outer(et, et), cov, et)
    assert fit.member
    assert fit.a1 == pytest.approx(2.0, rel=1e-8)
    assert fit.a2 == pytest.approx(3.0, rel=1e-8)
    assert not cone_fit(np.eye(3), cov, et).member


def test_cone_direction_keeps_structure(example42_market):
    md = example42_market
    cov, et = md.cov_theta(0), md.mean_theta(0)
    phi = cov + np.outer(et, et)
    r = mv_backward(md, mv_punishment(md, [0.2] * 4, [phi] * 4))
    report = structural_checks(r, md)
    assert all(fit.member for fit in report.cone.values())
    mv_control(r, md, 0, 10.0)


def test_genericity_scan_on_toy_market(toy_market):
    report = genericity_scan(toy_market, [[1.0]], 0, np.linspace(-0.1, 1.0, 111))
    # det W(mu) = 0.002 + 0.09 mu
    assert report.roots == [pytest.approx(-0.002 / 0.09, abs=1e-10)]
    assert report.positive_roots == []
    assert report.degree_bound == 2
    assert report.degree_ok
    assert report.nonsingular[report.grid > 0].all()


def test_genericity_scan_checks_arguments(toy_market):
    with pytest.raises(ValueError):
        genericity_scan(toy_market, [[1.0]], 1, [0.0, 1.0])
    with pytest.raises(ValueError):
        genericity_scan(toy_market, [[1.0]], 0, [0.0, 1.0], downstream_mus=[0.5])


@pytest.mark.parametrize("kwargs", [
    dict(s=1.0),
    dict(lam=0.0),
    dict(cov_e=[[0.04, 0.01], [0.0, 0.04]]),
    dict(cov_e=[[0.04, 0.1], [0.1, 0.04]]),
])
def test_market_validation(kwargs):
    data = dict(N=2, s=1.04, mean_e=[1.1, 1.2], cov_e=[[0.04, 0.0], [0.0, 0.04]], lam=1.0)
    data.update(kwargs)
    md = MarketData.constant(**data)
    with pytest.raises(MarketDataError):
        md.validate()
    with pytest.raises(MarketDataError):
        mv_backward(md, mv_punishment(md, [0.0, 0.0]))


def test_non_psd_direction_is_rejected(toy_market):
    with pytest.raises(MarketDataError):
        build_mv(toy_market, mv_punishment(toy_market, [0.1], [[[-1.0]]]))


@pytest.mark.slow
@pytest.mark.parametrize("k", sorted(MARKET_MINIMA))
def test_swept_minima_near_reference_intensity(example42_market, k):
    v_min, mu_star = MARKET_MINIMA[k]
    grid = np.arange(mu_star - 0.002, mu_star + 0.002 + 5e-6, 1e-5)
    result = mv_sweep(example42_market, grid, [k], z=10.0, form=RecursionForm.SYMMETRIC)
    assert not result.failures
    mu, value = result.argmin(k)
    assert mu == pytest.approx(mu_star, abs=1e-4)
    assert value == pytest.approx(v_min, abs=REFERENCE_ATOL)
