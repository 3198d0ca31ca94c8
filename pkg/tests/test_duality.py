import numpy as np
import pytest

from coulomb_ot.cost import CostModel
from coulomb_ot.duality import (
    NotCMonotoneError,
    PotentialPair,
    c_transform,
    grid_gradient,
    map_from_potential,
    ruschendorf_potentials,
    semiconcavity_probe,
)
from coulomb_ot.io import parse_spec
from coulomb_ot.measures import DiscreteMeasure
from coulomb_ot.solver import Plan, solve_lp

from conftest import atoms


def test_potentials_tight(u200):
    feas, eq = u200.pots.slack(u200.plan, u200.cd)
    assert feas <= 1e-8
    assert eq <= 1e-8
    assert u200.pots.psi[u200.pots.base[0]] == pytest.approx(0.0, abs=1e-12)


def test_potentials_dual_value_equals_cost(u200):
    val = u200.mu.weights @ u200.pots.psi + u200.mu.weights @ u200.pots.phi
    assert val == pytest.approx(u200.plan.recompute_cost(u200.cd), rel=1e-10)


def test_double_transform_dominance(rng):
    cost = CostModel.modified(0.05, 2)
    for _ in range(5):
        n = int(rng.integers(3, 21))
        X, Y = rng.uniform(0, 1, (n, 2)), rng.uniform(0, 1, (n, 2))
        f = rng.normal(size=n)
        fc = c_transform(f, cost, X, Y)          # on X
        fcc = c_transform(fc, cost, Y, X)        # back on Y
        assert np.all(fcc >= f - 1e-12)
        # the triple transform is the single transform
        np.testing.assert_allclose(c_transform(fcc, cost, X, Y), fc, atol=1e-12)


def test_c_transform_brute_force(rng):
    cost = CostModel.coulomb(1)
    X, Y = rng.uniform(0, 1, (6, 1)), rng.uniform(2, 3, (5, 1))
    f = rng.normal(size=5)
    out = c_transform(f, cost, X, Y)
    for i in range(6):
        assert out[i] == min(cost.eval(X[i], Y[j]) - f[j] for j in range(5))


def test_random_instances_feasible(rng):
    for seed in range(4):
        mu = parse_spec(f"random:seed={seed}:alpha=0.5:n=60")
        cost = CostModel.coulomb(1)
        plan, _ = solve_lp(mu, mu, cost)
        cd = cost.as_modified(0.02)
        pots = ruschendorf_potentials(plan, cd)
        feas, eq = pots.slack(plan, cd)
        assert feas <= 1e-8 and eq <= 1e-8


def test_negative_cycle_detected():
    mu = parse_spec("uniform:n=8")
    cost = CostModel.modified(0.01, 1)
    rows = np.arange(8)
    bad = Plan.build(rows, (rows + 1) % 8, np.full(8, 1 / 8), mu, mu, cost)
    with pytest.raises(NotCMonotoneError) as exc:
        ruschendorf_potentials(bad, cost)
    assert len(exc.value.cycle) >= 2


def test_disconnected_target_rejected():
    mu = atoms([[0.0], [1.0]])
    nu = atoms([[2.0], [3.0]])
    cost = CostModel.coulomb(1)
    plan = Plan.build([0], [0], [1.0], mu, nu, cost)
    with pytest.raises(ValueError):
        ruschendorf_potentials(plan, cost)


def test_semiconcavity_probe(u200):
    rep = semiconcavity_probe(u200.pots.psi, u200.mu, u200.pots.K)
    assert rep.ok, rep.violations


def test_semiconcavity_probe_detects_convex_kink():
    m = parse_spec("uniform:n=21")
    psi = 50 * np.abs(m.points[:, 0] - 0.5)
    rep = semiconcavity_probe(psi, m, K=1.0)
    assert not rep.ok
    assert rep.worst_index == 10
    with pytest.raises(ValueError):
        semiconcavity_probe(psi, m, K=float("inf"))


def test_grid_gradient_exact_on_quadratics():
    m = parse_spec("box:L=1x1:n=8")
    x = m.points
    f = 3 * x[:, 0] ** 2 - x[:, 0] * x[:, 1] + 2 * x[:, 1]
    grad, one_sided = grid_gradient(f, m)
    exact = np.stack([6 * x[:, 0] - x[:, 1], -x[:, 0] + 2], axis=1)
    inner = ~one_sided
    np.testing.assert_allclose(grad[inner], exact[inner], atol=1e-12)
    assert one_sided.sum() == 8 * 8 - 6 * 6


def test_map_from_potential(u200):
    table = map_from_potential(u200.pots.psi, u200.mu, u200.plan, delta=u200.delta)
    x = u200.mu.points[:, 0]
    interior = (np.abs(x - 0.5) > 0.02) & (x > 0.01) & (x < 0.99)
    assert np.nanmax(table.residual[interior]) <= u200.mu.spacing
    flagged = table.flagged()
    assert 0 in flagged and 199 in flagged
    assert "boundary" in table.flags[0]


def test_round_trip_dict(u50):
    d = u50.pots.to_dict()
    back = PotentialPair.from_dict(d)
    np.testing.assert_array_equal(back.psi, u50.pots.psi)
    assert back.K == u50.pots.K
    assert back.base == u50.pots.base


def test_base_out_of_range(u50):
    with pytest.raises(ValueError):
        ruschendorf_potentials(u50.plan, u50.cd, base=len(u50.plan))


def test_unequal_weights_potentials(rng):
    n = 25
    w = rng.uniform(0.5, 1.5, n)
    mu = DiscreteMeasure(rng.uniform(0, 1, (n, 1)), w / w.sum(), 1 / n)
    cost = CostModel.modified(0.01, 1)
    plan, _ = solve_lp(mu, mu, cost)
    pots = ruschendorf_potentials(plan, cost)
    feas, eq = pots.slack(plan, cost)
    assert feas <= 1e-8 and eq <= 1e-8
