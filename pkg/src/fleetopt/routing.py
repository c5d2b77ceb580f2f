"""Multi-depot routing subproblem: set-covering master over a route pool,
column generation against the exact route pricer, and a final integer pass.

Every client with a positive order carries an artificial "unserved" column
priced at the configured serve penalty, so the master is always feasible
and shortfalls surface as a measurable outcome instead of an error.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field

from .graphs import AuxiliaryGraph, build_auxiliary
from .milp import LinearModel, solve_lp, solve_mip
from .model import DemandRealization, InputError, InstanceConfig, Route
from .pricing import DualPrices, price_route

NEGATIVE_COLUMN_TOL = 1e-6
_DUALITY_TOL = 1e-6


class GraphBundle:
    """Shared shortest-path closure plus a cache of unfolded depot graphs."""

    def __init__(self, cg):
        self.cg = cg
        self._aux: dict = {}

    def aux(self, depot: str, xi: DemandRealization, capacity: float) -> AuxiliaryGraph:
        key = (depot, xi.id, capacity)
        if key not in self._aux:
            self._aux[key] = build_auxiliary(self.cg, depot, xi, capacity)
        return self._aux[key]


class RoutePool:
    """Deduplicated routes for one realization, grouped by depot."""

    def __init__(self, realization_id: str):
        self.realization_id = realization_id
        self.by_depot: dict[str, list[Route]] = {}
        self._keys: set = set()

    def add(self, route: Route) -> bool:
        if route.realization_id != self.realization_id:
            raise InputError(
                f"route tagged {route.realization_id!r} cannot enter pool {self.realization_id!r}"
            )
        key = route.key()
        if key in self._keys:
            return False
        self._keys.add(key)
        self.by_depot.setdefault(route.depot, []).append(route)
        return True

    def routes(self, depot: str | None = None) -> list[Route]:
        if depot is not None:
            return list(self.by_depot.get(depot, []))
        out = []
        for k in sorted(self.by_depot):
            out.extend(self.by_depot[k])
        return out

    def __len__(self) -> int:
        return len(self._keys)

    def copy(self) -> "RoutePool":
        clone = RoutePool(self.realization_id)
        for r in self.routes():
            clone.add(r)
        return clone


@dataclass
class RrmpResult:
    lp_value: float
    duals: DualPrices
    selection: list  # (Route, fractional value)
    unserved_frac: dict
    duality_residual: float


@dataclass
class SubproblemResult:
    value: float
    lp_value: float
    duals: DualPrices
    selected_routes: list
    unserved: set
    iterations: int
    lp_optimal: bool = True
    exact: bool = False  # value certified equal to the covering optimum
    trace: list = field(default_factory=list)


def _covering_model(pool, xi, fleet, cfg, integer):
    """Set-covering model over the pooled columns plus unserved artificials.

    Columns are reduced to the cheapest route per (depot, client set): any
    costlier duplicate is dominated in both the relaxation and the integer
    model, so the optimal values are unchanged.  The relaxation also keeps
    route variables unbounded above: with nonnegative costs an optimum with
    values at most one always exists, and omitting the redundant upper
    bounds makes the row prices alone reproduce the optimal value exactly.
    """
    cheapest: dict = {}
    for r in pool.routes():
        key = (r.depot, frozenset(r.clients))
        held = cheapest.get(key)
        if held is None or r.cost < held.cost - 1e-12:
            cheapest[key] = r
    routes = [cheapest[key] for key in sorted(cheapest, key=lambda x: (x[0], sorted(x[1])))]
    model = LinearModel("min")
    serve_penalty = cfg.serve_penalty()
    active = sorted(xi.active)
    covers = {i: [] for i in active}
    for idx, r in enumerate(routes):
        ub = 1.0 if integer else math.inf
        model.add_variable(f"z{idx}", lb=0.0, ub=ub, obj=r.cost, integer=integer)
        for i in r.clients:
            covers[i].append(idx)
    for i in active:
        model.add_variable(f"u@{i}", lb=0.0, ub=1.0 if integer else math.inf, obj=serve_penalty)
    for i in active:
        coeffs = {f"u@{i}": 1.0}
        for idx in covers[i]:
            coeffs[f"z{idx}"] = 1.0
        model.add_constraint(f"cover@{i}", coeffs, ">=", 1.0)
    for k in sorted(cfg.candidate_depots):
        coeffs = {f"z{idx}": 1.0 for idx, r in enumerate(routes) if r.depot == k}
        model.add_constraint(f"fleet@{k}", coeffs, "<=", float(fleet.get(k, 0)))
    return model, routes


def solve_rrmp(pool: RoutePool, xi: DemandRealization, fleet, cfg: InstanceConfig) -> RrmpResult:
    """Relaxed set-covering over the pool; always feasible via artificials.

    Returns the relaxation value, the client prices (cover rows) and depot
    prices (fleet rows), and the fractional selection.
    """
    model, routes = _covering_model(pool, xi, fleet, cfg, integer=False)
    res = solve_lp(model)
    if res.status != "optimal":
        raise RuntimeError(f"relaxed covering master unexpectedly {res.status}")
    pi, lam = {}, {}
    for i in xi.active:
        pi[i] = max(0.0, res.duals[f"cover@{i}"])
    for k in cfg.candidate_depots:
        lam[k] = min(0.0, res.duals[f"fleet@{k}"])
    duals = DualPrices(pi, lam)
    duals.validate(xi.active)
    dual_obj = sum(pi.values()) + sum(lam[k] * float(fleet.get(k, 0)) for k in lam)
    residual = abs(dual_obj - res.objective)
    if residual > _DUALITY_TOL:
        raise RuntimeError(f"duality identity violated by {residual}")
    selection = [
        (r, res.values[f"z{idx}"]) for idx, r in enumerate(routes) if res.values[f"z{idx}"] > 1e-9
    ]
    unserved_frac = {i: res.values[f"u@{i}"] for i in xi.active if res.values[f"u@{i}"] > 1e-9}
    return RrmpResult(res.objective, duals, selection, unserved_frac, residual)


def _solve_integer_pass(pool, xi, fleet, cfg):
    model, routes = _covering_model(pool, xi, fleet, cfg, integer=True)
    res = solve_mip(model, gap_tol=1e-9)
    if res.status != "optimal":
        raise RuntimeError(f"integer covering master unexpectedly {res.status}")
    selected = [r for idx, r in enumerate(routes) if res.values[f"z{idx}"] > 0.5]
    unserved = {i for i in xi.active if res.values[f"u@{i}"] > 1e-6}
    return res.objective, selected, unserved


def _subset_closure(pool, xi, cfg, graphs, depots, pricing_delta):
    """Add, per depot, a cheapest feasible route toward every client subset.

    Implemented with the exact pricer: a large uniform reward on the subset
    members makes the minimum reduced-cost route cover the whole subset (or
    as much of it as is feasible) at minimum travel cost.  With these
    columns pooled, the integer pass over the pool attains the true optimum
    of the covering formulation.
    """
    clients = sorted(xi.active)
    for depot in depots:
        aux = graphs.aux(depot, xi, cfg.vehicle_capacity)
        finite = [
            aux.cg.cost(a, b)
            for a in clients + [depot]
            for b in clients + [depot]
            if a != b and math.isfinite(aux.cg.cost(a, b))
        ]
        big = 1.0 + 2.0 * max(finite, default=1.0) * (len(clients) + aux.reload_count + 1)
        for mask in range(1, 1 << len(clients)):
            members = [clients[j] for j in range(len(clients)) if mask >> j & 1]
            duals = DualPrices({c: big for c in members}, {})
            priced = price_route(depot, duals, xi, aux, cfg, delta=pricing_delta)
            if priced.found:
                pool.add(priced.route)


def solve_mdvrp(
    first_stage,
    xi: DemandRealization,
    pool: RoutePool,
    cfg: InstanceConfig,
    graphs: GraphBundle,
    generate_columns: bool = True,
    max_pricing_rounds: int | None = None,
    pricing_time_budget: float | None = None,
    pricing_delta: float | None = None,
    closure_limit: int = 9,
    columns_per_call: int = 8,
    timer=None,
) -> SubproblemResult:
    """Estimate the routing cost of one realization under fixed depots/fleet.

    Alternates the relaxed covering master with one pricing call per open
    depot, adding every column whose reduced cost is below the acceptance
    threshold, until no depot yields one (or the round limit is hit); the
    value then comes from a branch-and-bound pass over the pooled columns.
    When that integer value exceeds the exhausted relaxation bound, the gap
    may be an artifact of the pool rather than a true integrality gap, so
    on instances of up to ``closure_limit`` active clients (the sweep is
    exponential in that count) the pool is completed with a cheapest route
    per client subset and the integer pass repeats; the result is then
    exact and flagged so.  The pool is updated in place and persists
    across calls.
    """
    if pool.realization_id != xi.id:
        raise InputError("pool belongs to a different realization")
    if not xi.active:
        return SubproblemResult(0.0, 0.0, DualPrices.zero(), [], set(), 0, exact=True)
    fleet = {k: int(v) for k, v in first_stage.fleet.items()}
    # pricing covers every open depot, fleet or not: the depot prices in the
    # cuts are only valid once no route of an open depot prices negative
    pricing_depots = sorted(k for k in cfg.candidate_depots if first_stage.open.get(k, False))
    lp_optimal = True
    trace = []
    state = {"iterations": 0, "rounds": 0}
    clock = _time.monotonic

    def run_cg_loop():
        rrmp = None
        while True:
            t0 = clock()
            rrmp = solve_rrmp(pool, xi, fleet, cfg)
            if timer is not None:
                timer.add("set_covering", clock() - t0)
            state["iterations"] += 1
            trace.append(
                {
                    "lp_value": rrmp.lp_value,
                    "duality_residual": rrmp.duality_residual,
                    "pool_size": len(pool),
                }
            )
            if not generate_columns:
                return rrmp
            if max_pricing_rounds is not None and state["rounds"] >= max_pricing_rounds:
                return rrmp
            state["rounds"] += 1
            added = False
            t0 = clock()
            for depot in pricing_depots:
                aux = graphs.aux(depot, xi, cfg.vehicle_capacity)
                priced = price_route(
                    depot,
                    rrmp.duals,
                    xi,
                    aux,
                    cfg,
                    delta=pricing_delta,
                    time_budget=pricing_time_budget,
                    collect=columns_per_call,
                )
                if not priced.optimal:
                    nonlocal_flags["lp_optimal"] = False
                if priced.found and priced.reduced_cost < -NEGATIVE_COLUMN_TOL:
                    if pool.add(priced.route):
                        added = True
                    for extra in priced.extra_routes or ():
                        if pool.add(extra):
                            added = True
            if timer is not None:
                timer.add("route_generators", clock() - t0)
            if not added:
                return rrmp

    def integer_pass():
        t0 = clock()
        out = _solve_integer_pass(pool, xi, fleet, cfg)
        if timer is not None:
            timer.add("set_covering", clock() - t0)
        return out

    nonlocal_flags = {"lp_optimal": True}
    rrmp = run_cg_loop()
    value, selected, unserved = integer_pass()
    exact = value <= rrmp.lp_value + 1e-6
    exhausted = generate_columns and max_pricing_rounds is None
    if not exact and exhausted and len(xi.active) <= closure_limit:
        serving = [k for k in pricing_depots if fleet.get(k, 0) > 0]
        t0 = clock()
        _subset_closure(pool, xi, cfg, graphs, serving, pricing_delta)
        if timer is not None:
            timer.add("route_generators", clock() - t0)
        rrmp = run_cg_loop()
        value, selected, unserved = integer_pass()
        exact = True
    lp_optimal = nonlocal_flags["lp_optimal"]
    exact = exact and lp_optimal and exhausted
    if rrmp.lp_value > value + 1e-6:
        raise RuntimeError(
            f"relaxation value {rrmp.lp_value} exceeds integer value {value}"
        )
    return SubproblemResult(
        value=value,
        lp_value=rrmp.lp_value,
        duals=rrmp.duals,
        selected_routes=selected,
        unserved=unserved,
        iterations=state["iterations"],
        lp_optimal=lp_optimal,
        trace=trace,
        exact=exact,
    )
