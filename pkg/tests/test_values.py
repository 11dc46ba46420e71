import numpy as np
import pytest
from conftest import random_mass
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import exhaustive_values

from mftraffic.errors import InvalidDecision, ValidationError
from mftraffic.mass import MassTrajectory
from mftraffic.network import E1, E2, E3, E4, E5
from mftraffic.scenario import scenario_from_dict, unit_scenario
from mftraffic.values import (
    CongestionParams,
    LinkDecision,
    control_bounds,
    link_cost,
    path_cost_vector,
    path_costs,
    value_field,
    value_lipschitz_bound,
)


def test_congestion_params_validation():
    with pytest.raises(ValidationError):
        CongestionParams([-0.1, 0, 0, 0, 0], [0] * 5)
    with pytest.raises(ValidationError):
        CongestionParams([0] * 4, [0] * 5)
    p = CongestionParams([1, 0, 0, 0, 0], [0.5] * 5)
    assert p.phi(np.full(5, 2.0)).tolist() == [2.5, 0.5, 0.5, 0.5, 0.5]
    assert p.phi_max(3.0) == 3.5


def test_link_cost_examples(unit):
    zero = MassTrajectory.zeros(unit.grid)
    assert link_cost(E4, 0.3, LinkDecision.stay(), zero, unit) == 1.0
    assert link_cost(E4, 0.0, LinkDecision.move(0.0, 2.0, 1.0), zero, unit) == 0.25
    half = unit.with_congestion([0] * 5, [0.5] * 5)
    assert link_cost(E4, 0.0, LinkDecision.move(0.0, 1.0, 1.0), zero, half) == pytest.approx(1.0, abs=1e-14)


def test_link_cost_invalid_decision(unit):
    with pytest.raises(InvalidDecision):
        LinkDecision.move(1.0, 1.0, 1.0)
    zero = MassTrajectory.zeros(unit.grid)
    with pytest.raises(InvalidDecision):
        link_cost(E4, 1.0, LinkDecision("move", 0.0, 0.5, 1.0), zero, unit)


def test_unit_values(unit, unit_field):
    V = unit_field.values
    assert abs(unit_field.v0[0] - 1.0) <= 1e-3
    assert abs(V[E4, 0] - 0.25) <= 1e-6
    d4 = unit_field.decision(E4, 0)
    assert d4.mode == "move" and d4.tau == pytest.approx(2.0)
    assert V[E3, 0] == pytest.approx(1.0, abs=1e-9)
    assert unit_field.decision(E3, 0).tau == pytest.approx(1.0, abs=1e-4)
    assert V[E1, 0] == pytest.approx(1.0, abs=1e-9) and V[E2, 0] == pytest.approx(1.0, abs=1e-9)
    assert unit_field.v0_tie[0]
    assert unit_field.first_link[0] == 0


def test_terminal_values(unit, unit_field):
    pen = unit.network.penalty_lengths * unit.alpha
    assert np.array_equal(unit_field.values[:, -1], pen)


def test_v0_is_min(unit_field):
    assert np.array_equal(unit_field.v0, np.minimum(unit_field.values[E1], unit_field.values[E2]))


def test_path_costs_unit(unit_field):
    J = path_cost_vector(0.0, unit_field)
    assert J[0] == pytest.approx(1.0, abs=1e-9)
    assert J[1] == pytest.approx(1.0, abs=1e-9)
    assert J[2] > 1.0


def test_path_costs_at_horizon(unit, unit_field):
    J = path_cost_vector(unit.horizon, unit_field)
    pen = unit.network.penalty_lengths
    assert J.tolist() == [pen[E1], pen[E2], pen[E1]]


def test_path_costs_large_alpha():
    # only the two-link paths keep their alpha = 1 costs; p3's last link gets dearer
    # to stay on, so its recorded decisions (and cost) change
    a1 = unit_scenario(grid_points=400)
    a100 = unit_scenario(grid_points=400, alpha=100.0)
    zero = MassTrajectory.zeros(a1.grid)
    f1, f100 = value_field(zero, a1), value_field(zero, a100)
    J1, J100 = path_cost_vector(0.0, f1), path_cost_vector(0.0, f100)
    assert all(p.move[:-1].all() for p in f100.policies)
    assert J100[:2] == pytest.approx(J1[:2], abs=1e-9)
    assert J100[2] > 1.0


@pytest.mark.parametrize("case", range(3))
def test_oracle_equivalence(oracle_cases, case):
    c = oracle_cases[case]
    sc = scenario_from_dict(c["scenario"])
    rho = np.array(c["rho"])
    V = exhaustive_values(sc.network.lengths, sc.alpha, sc.alpha_prime, sc.alpha_second, rho, sc.horizon)
    assert np.max(np.abs(value_field(rho, sc).values - V)) <= 1e-6


def _coarse(**kw):
    return unit_scenario(grid_points=80, rho_max=10.0, **kw)


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1), st.lists(st.floats(0, 0.5), min_size=5, max_size=5), st.floats(0.2, 3))
def test_stay_bound_and_terminal(seed, ap, alpha):
    sc = _coarse(alpha=alpha, alpha_prime=ap, alpha_second=[0.1] * 5)
    rho = random_mass(sc, np.random.default_rng(seed))
    f = value_field(rho, sc)
    stay = np.stack([f.stay_cost(e, sc.grid.nodes) for e in range(5)])
    assert np.all(f.values <= stay + 1e-12)
    assert np.array_equal(f.values[:, -1], alpha * sc.network.penalty_lengths)


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4), st.floats(0.01, 1.0))
def test_monotone_in_offset(seed, e, bump):
    sc = _coarse(alpha_prime=[0.1] * 5, alpha_second=[0.1] * 5)
    rho = random_mass(sc, np.random.default_rng(seed))
    hi = sc.alpha_second.copy()
    hi[e] += bump
    lo_v = value_field(rho, sc).values
    hi_v = value_field(rho, sc.with_congestion(sc.alpha_prime, hi)).values
    assert np.all(hi_v >= lo_v - 1e-12)


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1))
def test_lipschitz_and_control_bounds(seed):
    sc = _coarse(alpha_prime=[0.2] * 5, alpha_second=[0.05] * 5)
    rng = np.random.default_rng(seed)
    L = value_lipschitz_bound(sc.network, sc.alpha, sc.phi_max, sc.horizon)
    B = control_bounds(sc.network, sc.alpha, sc.phi_max, sc.horizon)
    for _ in range(2):
        f = value_field(random_mass(sc, rng, amplitude=sc.rho_max), sc)
        slopes = np.abs(np.diff(f.values, axis=1)) / sc.grid.dt
        assert slopes.max() <= L
        # the bound concerns chosen moves; a tie may sit 2 * tie_tol / l above it
        slack = 2 * sc.solver.tie_tol / sc.network.lengths
        move = np.stack([p.move for p in f.policies])
        assert np.all(np.where(move, f.speeds, 0.0) <= (B + slack)[:, None])


def test_decisions_at_nodes_are_recorded(unit_field):
    for e in (E1, E2, E3):
        k = np.arange(0, unit_field.grid.n, 97)
        move, tau = unit_field.decision_at(e, unit_field.grid.nodes[k])
        p = unit_field.policies[e]
        assert np.array_equal(move, p.move[k])
        assert np.allclose(tau[move], p.move_tau[k][move])


def test_ties_reported(unit_field):
    # with phi = 0 stay (cost 1 or 2) and move meet where l^2 / (2 (T - t)) equals the penalty
    ties = unit_field.ties()
    assert ("e4", 1500) in ties and ("e5", 1500) in ties


def test_path_costs_shape(unit_field):
    J = path_costs(unit_field, np.linspace(0, 2, 7))
    assert J.shape == (7, 3)
    assert np.all(np.isfinite(J))
