"""Ex-post evaluation: fix a first-stage design and route every demand day,
producing cost statistics, utilization, service levels, emissions and the
cost-versus-active-clients regression.

Three solve modes trade accuracy for speed: ``full_cg`` prices to
exhaustion, ``single_iteration`` prices one round, ``petal_heuristic``
selects from recycled routes only.  Day pools can be reseeded from other
days' solutions through the route recycler, which is how one day's work
accelerates the next.
"""

from __future__ import annotations

import math
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats as _scipy_stats

from .model import FirstStageSolution, InputError, InstanceConfig, route_distance
from .recycling import recycle_route
from .routing import GraphBundle, RoutePool, solve_mdvrp

MODES = ("full_cg", "single_iteration", "petal_heuristic")


@dataclass(frozen=True)
class DayRecord:
    date: str
    routing_cost: float
    active_clients: int
    vehicles_used: int
    unserved_clients: int
    distance: float
    solve_time: float


@dataclass
class EvaluationReport:
    mode: str
    records: list
    cost_stats: dict
    vehicle_utilization: float
    service_level_days: float
    service_level_orders: float
    daily_co2_tons: float
    regression: dict | None

    def recompute_stats(self) -> dict:
        return describe([r.routing_cost for r in self.records])


def describe(values) -> dict:
    """Mean, standard error, median, sample deviation, excess kurtosis,
    skewness and extremes of a series."""
    x = np.asarray(list(values), dtype=float)
    if x.size == 0:
        return {k: 0.0 for k in (
            "mean", "std_error", "median", "std_dev", "kurtosis", "skewness", "min", "max")}
    mean = float(np.mean(x))
    std = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    centered = x - mean
    m2 = float(np.mean(centered**2))
    skew = float(np.mean(centered**3) / m2**1.5) if m2 > 0 else 0.0
    kurt = float(np.mean(centered**4) / m2**2 - 3.0) if m2 > 0 else 0.0
    return {
        "mean": mean,
        "std_error": std / math.sqrt(x.size) if x.size else 0.0,
        "median": float(np.median(x)),
        "std_dev": std,
        "kurtosis": kurt,
        "skewness": skew,
        "min": float(np.min(x)),
        "max": float(np.max(x)),
    }


def regress_cost_on_clients(records) -> dict:
    """Ordinary least squares of daily routing cost on active client count."""
    pts = [(r.active_clients, r.routing_cost) for r in records]
    if len(pts) < 3:
        raise InputError("need at least 3 observations for the regression")
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts], dtype=float)
    if np.ptp(x) == 0:
        raise InputError("active-client counts are constant; regression undefined")
    xbar, ybar = x.mean(), y.mean()
    sxx = float(((x - xbar) ** 2).sum())
    sxy = float(((x - xbar) * (y - ybar)).sum())
    slope = sxy / sxx
    intercept = ybar - slope * xbar
    resid = y - (intercept + slope * x)
    sst = float(((y - ybar) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / sst if sst > 0 else 1.0
    return {"slope": slope, "intercept": intercept, "r_squared": r2}


def welch_test(costs_a, costs_b) -> dict:
    """Two-sample Welch t-test on daily cost series."""
    a = np.asarray(list(costs_a), dtype=float)
    b = np.asarray(list(costs_b), dtype=float)
    if a.size < 2 or b.size < 2:
        raise InputError("need at least 2 observations per series")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    denom = math.sqrt(va + vb)
    if denom == 0:
        raise InputError("zero variance in both series")
    t = (a.mean() - b.mean()) / denom
    dof = (va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    p = 2.0 * float(_scipy_stats.t.sf(abs(t), dof))
    return {"t_statistic": float(t), "dof": float(dof), "p_value": p}


def _seed_day_pool(day, sources, first_stage, cfg, cg):
    pool = RoutePool(day.id)
    if not day.active:
        return pool
    for routes in sources:
        for route in routes:
            if not first_stage.open.get(route.depot, False):
                continue
            recycled = recycle_route(route, day, cg, cfg)
            if recycled.clients:
                pool.add(recycled)
    return pool


def _warm_day_pool(pool, day, first_stage, cfg, graphs):
    from .planner import _petal  # petal seeding shared with the planner

    for depot in sorted(k for k, v in first_stage.open.items() if v):
        for client in sorted(day.active):
            if day.order_size[client] > cfg.vehicle_capacity + 1e-9:
                continue
            petal = _petal(depot, client, day, cfg, graphs.cg)
            if petal is not None:
                pool.add(petal)


def _solve_day(day, first_stage, cfg, graphs, mode, sources, pricing_time_budget):
    t0 = _time.monotonic()
    pool = _seed_day_pool(day, sources, first_stage, cfg, graphs.cg)
    if mode != "petal_heuristic" and day.active:
        _warm_day_pool(pool, day, first_stage, cfg, graphs)
    kwargs = {}
    if mode == "petal_heuristic":
        kwargs["generate_columns"] = False
    elif mode == "single_iteration":
        kwargs["max_pricing_rounds"] = 1
    res = solve_mdvrp(
        first_stage, day, pool, cfg, graphs,
        pricing_time_budget=pricing_time_budget, **kwargs,
    )
    distance = sum(route_distance(r, graphs.cg) for r in res.selected_routes)
    record = DayRecord(
        date=day.id,
        routing_cost=res.value,
        active_clients=len(day.active),
        vehicles_used=len(res.selected_routes),
        unserved_clients=len(res.unserved),
        distance=distance,
        solve_time=_time.monotonic() - t0,
    )
    return record, res


def evaluate(
    first_stage: FirstStageSolution,
    days,
    cfg: InstanceConfig,
    graphs: GraphBundle,
    mode: str = "full_cg",
    seed_pools: dict | None = None,
    recycle_across_days: bool = True,
    threads: int = 1,
    pricing_time_budget: float | None = None,
) -> EvaluationReport:
    """Solve one routing problem per demand day and summarize the outcome.

    ``seed_pools`` (realization id -> RoutePool, e.g. from a finished plan)
    are recycled into every day; with ``recycle_across_days`` the routes
    selected on earlier days are recycled forward in batches as well.
    """
    if mode not in MODES:
        raise InputError(f"unknown mode {mode!r}; expected one of {MODES}")
    if not days:
        raise InputError("no demand days to evaluate")
    first_stage.validate(cfg)
    if mode == "petal_heuristic":
        if not seed_pools or all(len(p) == 0 for p in seed_pools.values()):
            raise InputError(
                "petal_heuristic needs non-empty seed pools; warm-start or plan first"
            )
    sources = [pool.routes() for pool in (seed_pools or {}).values()]
    records, unserved_total = [], 0
    batch = max(1, threads)
    pending = list(days)
    while pending:
        chunk, pending = pending[:batch], pending[batch:]
        snapshot = list(sources)
        if threads > 1 and len(chunk) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool_exec:
                outs = list(
                    pool_exec.map(
                        lambda d: _solve_day(
                            d, first_stage, cfg, graphs, mode, snapshot, pricing_time_budget
                        ),
                        chunk,
                    )
                )
        else:
            outs = [
                _solve_day(d, first_stage, cfg, graphs, mode, snapshot, pricing_time_budget)
                for d in chunk
            ]
        for record, res in outs:
            records.append(record)
            unserved_total += record.unserved_clients
            if recycle_across_days and res.selected_routes:
                sources.append(list(res.selected_routes))

    total_fleet = first_stage.total_fleet()
    if total_fleet > 0:
        utilization = float(np.mean([r.vehicles_used / total_fleet for r in records]))
    else:
        utilization = 0.0
    total_orders = sum(r.active_clients for r in records)
    service_days = float(np.mean([1.0 if r.unserved_clients == 0 else 0.0 for r in records]))
    service_orders = 1.0 - unserved_total / total_orders if total_orders else 1.0
    mean_distance = float(np.mean([r.distance for r in records]))
    co2 = cfg.emission_factor_kg_per_mile * mean_distance / 1000.0
    try:
        regression = regress_cost_on_clients(records)
    except InputError:
        regression = None
    return EvaluationReport(
        mode=mode,
        records=records,
        cost_stats=describe([r.routing_cost for r in records]),
        vehicle_utilization=utilization,
        service_level_days=service_days,
        service_level_orders=service_orders,
        daily_co2_tons=co2,
        regression=regression,
    )


def write_charts(report: EvaluationReport, directory) -> list:
    """Optional static charts: cost ECDF, utilization histogram, regression
    scatter.  Returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    costs = sorted(r.routing_cost for r in report.records)
    fig, ax = plt.subplots()
    ax.step(costs, np.arange(1, len(costs) + 1) / len(costs), where="post")
    ax.set_xlabel("daily routing cost")
    ax.set_ylabel("empirical CDF")
    path = directory / "cost_ecdf.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots()
    ax.hist([r.vehicles_used for r in report.records], bins=20)
    ax.set_xlabel("vehicles used per day")
    ax.set_ylabel("days")
    path = directory / "utilization_hist.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    if report.regression is not None:
        fig, ax = plt.subplots()
        xs = [r.active_clients for r in report.records]
        ys = [r.routing_cost for r in report.records]
        ax.scatter(xs, ys, s=12)
        grid = np.linspace(min(xs), max(xs), 50)
        ax.plot(grid, report.regression["intercept"] + report.regression["slope"] * grid)
        ax.set_xlabel("active clients")
        ax.set_ylabel("daily routing cost")
        path = directory / "cost_regression.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written
