import itertools
import math

import numpy as np
import pytest

from fleetopt.milp import LinearModel, solve_lp, solve_mip, write_lp_text
from fleetopt.model import InputError

from oracles import enumerate_lp_basic_solutions


def test_min_x_at_least_three():
    m = LinearModel("min")
    m.add_variable("x", lb=0, obj=1)
    m.add_constraint("c", {"x": 1}, ">=", 3)
    res = solve_lp(m)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(3.0)
    assert res.values["x"] == pytest.approx(3.0)
    assert res.duals["c"] == pytest.approx(1.0)


def test_infeasible_pair():
    m = LinearModel("min")
    m.add_variable("x", lb=0, obj=1)
    m.add_constraint("a", {"x": 1}, "<=", 1)
    m.add_constraint("b", {"x": 1}, ">=", 2)
    assert solve_lp(m).status == "infeasible"


def test_unbounded_detection():
    m = LinearModel("min")
    m.add_variable("x", lb=0, obj=-1)
    m.add_constraint("a", {"x": 1}, ">=", 0)
    assert solve_lp(m).status == "unbounded"


def test_model_validation():
    m = LinearModel("min")
    m.add_variable("x")
    with pytest.raises(InputError):
        m.add_variable("x")
    with pytest.raises(InputError):
        m.add_variable("y", lb=2, ub=1)
    with pytest.raises(InputError):
        m.add_constraint("c", {"zz": 1}, "<=", 1)
    with pytest.raises(InputError):
        m.add_constraint("c", {"x": 1}, "<<", 1)
    with pytest.raises(InputError):
        m.add_constraint("c", {"x": math.inf}, "<=", 1)


def test_five_var_lp_matches_basic_solution_enumeration():
    c = [3.0, -2.0, 4.0, 1.0, -1.0]
    a = [
        [1, 1, 0, 2, 1],
        [0, 1, 1, 0, 3],
        [2, 0, 1, 1, 0],
        [1, -1, 0, 1, 1],
    ]
    senses = ["<=", "<=", ">=", "="]
    rhs = [8.0, 6.0, 2.0, 3.0]
    bounds = [(0.0, 5.0)] * 5
    m = LinearModel("min")
    for j in range(5):
        m.add_variable(f"x{j}", lb=0, ub=5, obj=c[j])
    for i in range(4):
        m.add_constraint(f"r{i}", {f"x{j}": a[i][j] for j in range(5)}, senses[i], rhs[i])
    res = solve_lp(m)
    oracle = enumerate_lp_basic_solutions(c, a, senses, rhs, bounds)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(oracle, abs=1e-7)
    # strong duality against the row prices plus reduced-cost bound terms
    primal = sum(c[j] * res.values[f"x{j}"] for j in range(5))
    assert primal == pytest.approx(res.objective, abs=1e-7)


def test_duals_satisfy_sign_convention_and_complementary_slackness(rng):
    for trial in range(30):
        n, mrows = int(rng.integers(2, 6)), int(rng.integers(1, 5))
        a = rng.normal(size=(mrows, n)).round(3)
        x0 = rng.uniform(0, 3, n)
        senses = [str(s) for s in rng.choice(["<=", ">=", "="], mrows)]
        slack = rng.uniform(0.1, 1.5, mrows)
        rhs = a @ x0 + np.array(
            [s if sense == "<=" else (-s if sense == ">=" else 0.0) for s, sense in zip(slack, senses)]
        )
        cost = rng.normal(size=n).round(3)
        m = LinearModel("min")
        for j in range(n):
            m.add_variable(f"x{j}", lb=0, ub=6, obj=float(cost[j]))
        for i in range(mrows):
            m.add_constraint(f"r{i}", {f"x{j}": float(a[i, j]) for j in range(n)}, senses[i], float(rhs[i]))
        res = solve_lp(m)
        if res.status != "optimal":
            continue
        x = np.array([res.values[f"x{j}"] for j in range(n)])
        for i in range(mrows):
            activity = float(a[i] @ x)
            dual = res.duals[f"r{i}"]
            if senses[i] == "<=":
                assert activity <= rhs[i] + 1e-7
                assert dual <= 1e-7
                assert abs(dual * (rhs[i] - activity)) < 1e-6
            elif senses[i] == ">=":
                assert activity >= rhs[i] - 1e-7
                assert dual >= -1e-7
                assert abs(dual * (activity - rhs[i])) < 1e-6


def test_knapsack():
    m = LinearModel("max")
    m.add_variable("a", lb=0, ub=1, obj=10, integer=True)
    m.add_variable("b", lb=0, ub=1, obj=6, integer=True)
    m.add_constraint("cap", {"a": 5, "b": 4}, "<=", 8)
    res = solve_mip(m)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(10.0)
    assert res.values == {"a": 1.0, "b": 0.0}


def test_integral_polytope_mip_equals_lp():
    # interval (consecutive-ones) rows keep the relaxation integral
    m_int = LinearModel("min")
    m_lp = LinearModel("min")
    cost = [4.0, 2.0, 3.0, 5.0]
    for model in (m_int, m_lp):
        for j, cj in enumerate(cost):
            model.add_variable(f"x{j}", lb=0, ub=1, obj=cj, integer=model is m_int)
        model.add_constraint("c0", {"x0": 1, "x1": 1}, ">=", 1)
        model.add_constraint("c1", {"x1": 1, "x2": 1}, ">=", 1)
        model.add_constraint("c2", {"x2": 1, "x3": 1}, ">=", 1)
    assert solve_mip(m_int).objective == pytest.approx(solve_lp(m_lp).objective)


def test_twelve_binary_set_cover_matches_enumeration(rng):
    n_vars, n_rows = 12, 7
    cover = rng.random((n_rows, n_vars)) < 0.35
    for i in range(n_rows):  # every row coverable
        if not cover[i].any():
            cover[i, int(rng.integers(0, n_vars))] = True
    cost = rng.integers(1, 20, n_vars).astype(float)
    m = LinearModel("min")
    for j in range(n_vars):
        m.add_variable(f"x{j}", lb=0, ub=1, obj=float(cost[j]), integer=True)
    for i in range(n_rows):
        m.add_constraint(f"r{i}", {f"x{j}": 1.0 for j in range(n_vars) if cover[i, j]}, ">=", 1)
    res = solve_mip(m)
    best = math.inf
    for bits in itertools.product([0, 1], repeat=n_vars):
        x = np.array(bits)
        if all(x[cover[i]].sum() >= 1 for i in range(n_rows)):
            best = min(best, float(cost @ x))
    assert res.status == "optimal"
    assert res.objective == pytest.approx(best, abs=1e-6)


def test_mip_gap_and_bound_fields():
    m = LinearModel("min")
    for j in range(6):
        m.add_variable(f"x{j}", lb=0, ub=1, obj=float(j + 1), integer=True)
    m.add_constraint("pick", {f"x{j}": 1.0 for j in range(6)}, ">=", 2)
    res = solve_mip(m)
    assert res.status == "optimal"
    assert res.best_bound == pytest.approx(res.objective, abs=1e-6)
    assert res.gap <= 1e-6


def test_determinism_repeat_solves():
    def build():
        m = LinearModel("min")
        for j in range(8):
            m.add_variable(f"x{j}", lb=0, ub=3, obj=((-1) ** j) * (j + 0.5), integer=j % 2 == 0)
        m.add_constraint("r0", {f"x{j}": 1.0 for j in range(8)}, "<=", 9)
        m.add_constraint("r1", {f"x{j}": float(j % 3 - 1) for j in range(8)}, ">=", -2)
        return m

    first = solve_mip(build())
    second = solve_mip(build())
    assert first.objective == second.objective
    assert first.values == second.values
    assert first.nodes == second.nodes


def test_iteration_limit_reported():
    m = LinearModel("min")
    for j in range(10):
        m.add_variable(f"x{j}", lb=0, ub=10, obj=-1.0)
    for i in range(8):
        m.add_constraint(f"r{i}", {f"x{j}": float((i + j) % 4 + 1) for j in range(10)}, "<=", 50)
    res = solve_lp(m, iteration_limit=1)
    assert res.status == "iteration_limit"


def test_lp_text_dump(tmp_path):
    m = LinearModel("min")
    m.add_variable("x", lb=0, ub=4, obj=2, integer=True)
    m.add_constraint("row", {"x": 1}, ">=", 1)
    out = tmp_path / "model.lp"
    write_lp_text(m, out)
    text = out.read_text()
    assert "Minimize" in text and "row:" in text and "General" in text
