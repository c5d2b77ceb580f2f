import math

import numpy as np
import pytest
from scipy import stats as scipy_stats

from fleetopt.evaluation import (
    DayRecord,
    describe,
    evaluate,
    regress_cost_on_clients,
    welch_test,
)
from fleetopt.graphs import build_complete_graph
from fleetopt.model import DemandRealization, FirstStageSolution, InputError
from fleetopt.planner import warm_start_pools
from fleetopt.routing import GraphBundle

from instances import random_realization, scenario_instance


def _records(values, clients=None):
    clients = clients or [int(5 + i % 4) for i in range(len(values))]
    return [
        DayRecord(f"d{i}", float(v), int(c), 1, 0, 10.0, 0.1)
        for i, (v, c) in enumerate(zip(values, clients))
    ]


def test_describe_matches_scipy_moments():
    values = [12.0, 15.5, 9.1, 22.4, 18.0, 11.2, 30.9, 14.4, 16.6, 13.0]
    stats = describe(values)
    assert stats["mean"] == pytest.approx(np.mean(values))
    assert stats["median"] == pytest.approx(np.median(values))
    assert stats["std_dev"] == pytest.approx(np.std(values, ddof=1))
    assert stats["std_error"] == pytest.approx(np.std(values, ddof=1) / math.sqrt(len(values)))
    assert stats["skewness"] == pytest.approx(scipy_stats.skew(values), abs=1e-12)
    assert stats["kurtosis"] == pytest.approx(scipy_stats.kurtosis(values), abs=1e-12)
    assert stats["min"] == 9.1 and stats["max"] == 30.9


def test_regression_collinear_points():
    recs = _records([100.0, 200.0, 300.0], clients=[10, 20, 30])
    fit = regress_cost_on_clients(recs)
    assert fit["slope"] == pytest.approx(10.0)
    assert fit["intercept"] == pytest.approx(0.0, abs=1e-9)
    assert fit["r_squared"] == pytest.approx(1.0)


def test_regression_two_point_line():
    recs = _records([50.0, 50.0, 90.0], clients=[5, 5, 10])
    fit = regress_cost_on_clients(recs)
    assert fit["slope"] == pytest.approx(8.0)
    assert fit["intercept"] == pytest.approx(10.0)


def test_regression_recovers_generator_slope():
    rng = np.random.default_rng(12)
    n = 400
    x = rng.integers(5, 60, n)
    noise = rng.normal(0, 35.0, n)
    y = 22.0 * x + 150.0 + noise
    recs = _records(list(y), clients=list(int(v) for v in x))
    fit = regress_cost_on_clients(recs)
    se = 35.0 / math.sqrt(float(((x - x.mean()) ** 2).sum()))
    assert abs(fit["slope"] - 22.0) <= 4 * se


def test_regression_degenerate_inputs():
    with pytest.raises(InputError):
        regress_cost_on_clients(_records([1.0, 2.0]))
    with pytest.raises(InputError):
        regress_cost_on_clients(_records([1.0, 2.0, 3.0], clients=[5, 5, 5]))


def test_welch_test_against_scipy():
    rng = np.random.default_rng(3)
    a = rng.normal(100, 10, 40)
    b = rng.normal(110, 14, 35)
    mine = welch_test(a, b)
    ref = scipy_stats.ttest_ind(a, b, equal_var=False)
    assert mine["t_statistic"] == pytest.approx(ref.statistic)
    assert mine["p_value"] == pytest.approx(ref.pvalue)


def _evaluation_setup(seed=30, n_scen=2):
    net, cfg, scen = scenario_instance(seed, n_depots=2, n_nodes=8, n_scen=n_scen, max_clients=5)
    cg = build_complete_graph(net)
    graphs = GraphBundle(cg)
    depots = sorted(cfg.candidate_depots)
    fs = FirstStageSolution(
        open={d: True for d in depots},
        fleet={d: 2 for d in depots},
        covered={},
    )
    return cfg, graphs, fs


def test_no_active_day_contributes_zero():
    cfg, graphs, fs = _evaluation_setup()
    days = [DemandRealization("quiet", frozenset(), {})]
    report = evaluate(fs, days, cfg, graphs, mode="full_cg")
    rec = report.records[0]
    assert rec.routing_cost == 0.0
    assert rec.vehicles_used == 0
    assert report.service_level_days == 1.0


def test_utilization_and_service_levels():
    cfg, graphs, fs = _evaluation_setup(31)
    days = [random_realization(5000 + i, [f"c{i}" for i in range(8)], max_active=4) for i in range(6)]
    report = evaluate(fs, days, cfg, graphs, mode="full_cg")
    total = fs.total_fleet()
    by_hand = np.mean([r.vehicles_used / total for r in report.records])
    assert report.vehicle_utilization == pytest.approx(by_hand)
    assert 0.0 <= report.vehicle_utilization <= 1.0
    assert 0.0 <= report.service_level_days <= 1.0
    assert 0.0 <= report.service_level_orders <= 1.0
    assert report.daily_co2_tons == pytest.approx(
        cfg.emission_factor_kg_per_mile * np.mean([r.distance for r in report.records]) / 1000.0
    )


def test_report_aggregates_recompute():
    cfg, graphs, fs = _evaluation_setup(32)
    days = [random_realization(6000 + i, [f"c{i}" for i in range(8)], max_active=4) for i in range(5)]
    report = evaluate(fs, days, cfg, graphs, mode="full_cg")
    assert report.recompute_stats() == report.cost_stats


def test_zero_fleet_service_level_counts_quiet_days():
    cfg, graphs, _ = _evaluation_setup(33)
    depots = sorted(cfg.candidate_depots)
    fs = FirstStageSolution(open={d: False for d in depots}, fleet={d: 0 for d in depots}, covered={})
    days = [
        DemandRealization("quiet", frozenset(), {}),
        random_realization(777, [f"c{i}" for i in range(8)], max_active=3),
    ]
    report = evaluate(fs, days, cfg, graphs, mode="full_cg")
    assert report.vehicle_utilization == 0.0
    assert report.service_level_days == pytest.approx(0.5)


def test_petal_mode_requires_seed_pools():
    cfg, graphs, fs = _evaluation_setup(34)
    days = [random_realization(8000, [f"c{i}" for i in range(8)], max_active=3)]
    with pytest.raises(InputError, match="warm-start"):
        evaluate(fs, days, cfg, graphs, mode="petal_heuristic")


def test_mode_dominance_per_day():
    cfg, graphs, fs = _evaluation_setup(35)
    clients = [f"c{i}" for i in range(8)]
    seeds = [
        DemandRealization(
            f"seed{j}",
            frozenset(clients[j : j + 4]),
            {c: 3.0 for c in clients[j : j + 4]},
            probability=1.0,
        )
        for j in range(2)
    ]
    seed_pools = warm_start_pools(cfg, seeds, graphs)
    days = [random_realization(9000 + i, clients, max_active=5) for i in range(8)]
    reports = {
        mode: evaluate(
            fs, days, cfg, graphs, mode=mode, seed_pools=seed_pools, recycle_across_days=False
        )
        for mode in ("full_cg", "single_iteration", "petal_heuristic")
    }
    for full, single, petal in zip(
        reports["full_cg"].records,
        reports["single_iteration"].records,
        reports["petal_heuristic"].records,
    ):
        assert full.routing_cost <= single.routing_cost + 1e-6
        assert single.routing_cost <= petal.routing_cost + 1e-6


def test_unknown_mode_rejected():
    cfg, graphs, fs = _evaluation_setup(36)
    with pytest.raises(InputError):
        evaluate(fs, [DemandRealization("d", frozenset(), {})], cfg, graphs, mode="warp")


def test_threaded_evaluation_matches_serial():
    cfg, graphs, fs = _evaluation_setup(38)
    days = [random_realization(9700 + i, [f"c{i}" for i in range(8)], max_active=4) for i in range(6)]
    serial = evaluate(fs, days, cfg, graphs, mode="full_cg", recycle_across_days=False)
    threaded = evaluate(fs, days, cfg, graphs, mode="full_cg", recycle_across_days=False, threads=3)
    assert [r.routing_cost for r in serial.records] == pytest.approx(
        [r.routing_cost for r in threaded.records]
    )
    assert [r.date for r in serial.records] == [r.date for r in threaded.records]


def test_charts_written(tmp_path):
    cfg, graphs, fs = _evaluation_setup(37)
    days = [random_realization(9500 + i, [f"c{i}" for i in range(8)], max_active=4) for i in range(4)]
    report = evaluate(fs, days, cfg, graphs, mode="full_cg")
    from fleetopt.evaluation import write_charts

    written = write_charts(report, tmp_path / "charts")
    assert all(p.exists() for p in written)
    assert len(written) >= 2
