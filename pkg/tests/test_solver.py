import numpy as np
import pytest

from coulomb_ot import solver
from coulomb_ot.cost import CostModel
from coulomb_ot.io import parse_spec
from coulomb_ot.measures import DiscreteMeasure
from coulomb_ot.reference import brute_force_assignment, uniform_1d_map
from coulomb_ot.solver import (
    InfeasibleError,
    Plan,
    solve_entropic,
    solve_lp,
    symmetrized,
    verify_c_monotonicity,
)

from conftest import atoms


def random_weights(rng, n):
    w = rng.uniform(0.5, 1.5, n)
    return w / w.sum()


def check_certificate(plan, report, cost, tol=1e-9):
    """Primal feasibility, dual feasibility and complementary slackness."""
    C = cost.matrix(plan.mu.points, plan.nu.points)
    red = C - report.u[:, None] - report.v[None, :]
    assert plan.marginal_error() < 1e-9
    assert np.nanmin(np.where(np.isfinite(C), red, np.inf)) > -tol
    assert np.abs(red[plan.rows, plan.cols]).max() < tol
    assert abs(report.dual_gap) < tol


def test_uniform_map(u200):
    plan, rep = u200.plan, u200.report
    x = plan.sources[:, 0]
    err = np.abs(plan.targets[:, 0] - uniform_1d_map(1.0, x)).max()
    assert err <= 2 / 200
    assert rep.primal_cost == pytest.approx(2.0, rel=1e-3)
    check_certificate(plan, rep, u200.c0)


def test_plan_entries_sorted(u50):
    r, c = u50.plan.rows, u50.plan.cols
    keys = r * u50.n + c
    assert np.all(np.diff(keys) > 0)


def test_brute_force_agreement(rng):
    cost = CostModel.coulomb(2)
    for n in range(2, 7):
        mu = atoms(rng.uniform(0, 1, (n, 2)))
        nu = atoms(rng.uniform(0, 1, (n, 2)))
        plan, rep = solve_lp(mu, nu, cost)
        _, best = brute_force_assignment(mu, nu, cost)
        assert rep.primal_cost == pytest.approx(best, rel=1e-12)
        check_certificate(plan, rep, cost)


def test_dense_lp_unequal_weights(rng):
    cost = CostModel.coulomb(1)
    mu = DiscreteMeasure(rng.uniform(0, 1, (30, 1)), random_weights(rng, 30), 1 / 30)
    nu = DiscreteMeasure(rng.uniform(0, 1, (25, 1)), random_weights(rng, 25), 1 / 25)
    plan, rep = solve_lp(mu, nu, cost)
    check_certificate(plan, rep, cost)
    assert verify_c_monotonicity(plan, cost).ok


def test_column_generation_matches_dense(monkeypatch, rng):
    cost = CostModel.coulomb(2)
    n = 120
    mu = DiscreteMeasure(rng.uniform(0, 1, (n, 2)), random_weights(rng, n), 1 / n)
    plan_d, rep_d = solve_lp(mu, mu, cost)
    monkeypatch.setattr(solver, "DENSE_LP_LIMIT", 100)
    plan_c, rep_c = solve_lp(mu, mu, cost)
    assert rep_c.primal_cost == pytest.approx(rep_d.primal_cost, rel=1e-10)
    check_certificate(plan_c, rep_c, cost)


def test_self_transport_avoids_diagonal(u50):
    assert np.all(u50.plan.rows != u50.plan.cols)


def test_infeasible_single_atom():
    mu = atoms([[0.0]])
    with pytest.raises(InfeasibleError):
        solve_lp(mu, mu, CostModel.coulomb(1))
    with pytest.raises(InfeasibleError):
        solve_entropic(mu, mu, CostModel.coulomb(1), 10.0)


def test_max_size():
    mu = parse_spec("uniform:n=50")
    with pytest.raises(ValueError):
        solve_lp(mu, mu, CostModel.coulomb(1), max_size=10)


def test_symmetrize(u50):
    plan = symmetrized(u50.plan, u50.c0)
    np.testing.assert_allclose(plan.dense(), plan.dense().T)
    assert plan.cost_value == pytest.approx(u50.plan.cost_value, rel=1e-12)
    assert plan.marginal_error() < 1e-14
    other = parse_spec("uniform:L=2:n=50")
    with pytest.raises(ValueError):
        solve_lp(u50.mu, other, u50.c0, symmetrize=True)


def test_entropic_converges_to_lp(rng):
    cost = CostModel.coulomb(1)
    mu = parse_spec("uniform:n=40")
    _, exact = solve_lp(mu, mu, cost)
    gaps = []
    for eta in (5.0, 20.0, 80.0):
        plan, rep = solve_entropic(mu, mu, cost, eta, tol=1e-10)
        assert plan.marginal_error() < 1e-8
        P = plan.dense()
        P = P[P > 0]
        assert rep.dual_gap == pytest.approx(-(P * np.log(P)).sum() / eta, rel=1e-6)
        assert rep.primal_cost >= exact.primal_cost - 1e-9
        gaps.append(rep.primal_cost - exact.primal_cost)
    assert gaps[0] > gaps[1] > gaps[2]


def test_entropic_rejects_bad_eta():
    mu = parse_spec("uniform:n=10")
    with pytest.raises(ValueError):
        solve_entropic(mu, mu, CostModel.coulomb(1), 0.0)


def test_monotonicity_detects_bad_plan():
    mu = parse_spec("uniform:n=10")
    cost = CostModel.coulomb(1)
    # shift by one cell: cyclic but short jumps, clearly not optimal
    rows = np.arange(10)
    plan = Plan.build(rows, (rows + 1) % 10, np.full(10, 0.1), mu, mu, cost)
    rep = verify_c_monotonicity(plan, cost)
    assert not rep.ok and rep.max_violation > 0
    p, q = rep.violations[0]
    x, y = plan.sources, plan.targets
    assert (cost.eval(x[p], y[p]) + cost.eval(x[q], y[q])
            > cost.eval(x[p], y[q]) + cost.eval(x[q], y[p]))
    sampled = verify_c_monotonicity(plan, cost, samples=20, seed=1)
    assert sampled.pairs_checked <= 20


def test_plan_helpers(u50):
    plan = u50.plan
    np.testing.assert_allclose(plan.row_sums(), u50.mu.weights)
    assert plan.recompute_cost(u50.c0) == pytest.approx(plan.cost_value)
    T = plan.transpose()
    assert T.support_set() == {(j, i) for i, j in plan.support_set()}
    sub = plan.restrict(plan.rows < 10)
    assert len(sub) == 10
    np.testing.assert_array_equal(plan.main_target(), plan.cols)
    with pytest.raises(ValueError):
        Plan(np.array([0]), np.array([0]), np.array([0.0]), u50.mu, u50.mu)
