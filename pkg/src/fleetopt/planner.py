"""First-stage optimization: depot siting and fleet sizing against a set of
demand scenarios, driven by iterative cuts from the routing subproblems.

The master program chooses depots, per-depot fleet counts, one routing-cost
estimate per scenario, and coverage indicators whose penalties steer early
iterations away from opening nothing.  Each cut combines the dual prices of
one subproblem evaluation with a deactivation term that switches the cut
off whenever the set of open depots differs from the generating iterate, so
the dual information is only trusted where it is known to be valid.

Route generation is expensive, so it runs only while the incumbent keeps
improving ("activation"): other iterations re-optimize over pooled routes
without pricing.  Pools persist across iterations and, optionally, routes
selected for one scenario are recycled into the others.
"""

from __future__ import annotations

import math
import threading
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .milp import LinearModel, solve_mip
from .model import (
    DemandRealization,
    FirstStageSolution,
    InputError,
    InstanceConfig,
    Route,
    build_route,
    route_feasible,
)
from .pricing import DualPrices, price_route
from .recycling import recycle_route
from .routing import GraphBundle, RoutePool, SubproblemResult, solve_mdvrp, solve_rrmp

CUT_TOL = 1e-6


@dataclass(frozen=True)
class OptimalityCut:
    """One subproblem evaluation turned into a master row."""

    scenario: str
    iteration: int
    pi_sum: float
    lam: dict
    open_set: frozenset
    eta_star: float


@dataclass
class MasterState:
    iteration: int = 0
    lower_bound: float = -math.inf
    upper_bound: float = math.inf
    incumbent: FirstStageSolution | None = None
    eta: dict = field(default_factory=dict)
    cuts: list = field(default_factory=list)
    route_gen_active: bool = True
    # first-stage points whose value is fully confirmed; removed from the
    # master so the search can walk past a real subproblem integrality gap
    exclusions: list = field(default_factory=list)


@dataclass
class Accel:
    """Switches for the acceleration strategies."""

    pooling: bool = True
    activation: bool = True
    recycling: bool = True


@dataclass
class RunBudgets:
    max_iterations: int = 60
    time_limit: float | None = None
    pricing_time_budget: float | None = None


@dataclass
class PlanResult:
    first_stage: FirstStageSolution
    state: MasterState
    per_scenario: dict  # scenario id -> SubproblemResult at the incumbent
    trace: list
    status: str  # "optimal" or "budget_exhausted"
    gap: float


class PhaseTimer:
    """Named wall-clock buckets for the run manifest."""

    def __init__(self):
        self.totals: dict = {}
        self._lock = threading.Lock()

    def add(self, phase: str, seconds: float) -> None:
        with self._lock:
            self.totals[phase] = self.totals.get(phase, 0.0) + seconds

    class _Span:
        def __init__(self, timer, phase):
            self.timer, self.phase = timer, phase

        def __enter__(self):
            self.t0 = _time.monotonic()

        def __exit__(self, *exc):
            self.timer.add(self.phase, _time.monotonic() - self.t0)
            return False

    def span(self, phase: str) -> "_Span":
        return PhaseTimer._Span(self, phase)


def check_probabilities(scenarios) -> None:
    total = 0.0
    for s in scenarios:
        if s.probability is None:
            raise InputError(f"scenario {s.id} has no probability")
        total += s.probability
    if abs(total - 1.0) > 1e-9:
        raise InputError(f"scenario probabilities sum to {total}, expected 1")


def reachable_depots(cfg: InstanceConfig, cg, node: str) -> list:
    return [k for k in sorted(cfg.candidate_depots) if cg.time(k, node) <= cfg.coverage_radius]


def build_master(cfg: InstanceConfig, scenarios, cuts, cg, exclusions=()) -> LinearModel:
    """Master model: depot binaries, fleet integers, per-scenario estimates,
    coverage indicators, and all pooled cuts."""
    if not cfg.candidate_depots:
        raise InputError("no candidate depots")
    check_probabilities(scenarios)
    depots = sorted(cfg.candidate_depots)
    big_m = cfg.max_vehicles_per_depot
    model = LinearModel("min")
    for k in depots:
        model.add_variable(f"x@{k}", lb=0, ub=1, obj=cfg.depot_daily_cost[k], integer=True)
    for k in depots:
        model.add_variable(f"y@{k}", lb=0, ub=big_m, obj=cfg.vehicle_daily_cost, integer=True)
    for s in scenarios:
        model.add_variable(f"eta@{s.id}", lb=0.0, obj=s.probability)
    for i in cg.order:
        rho = cfg.penalty(i)
        model.add_variable(f"w@{i}", lb=0, ub=1, obj=-rho, integer=True)
        model.objective_offset += rho
    for k in depots:
        model.add_constraint(f"link@{k}", {f"y@{k}": 1.0, f"x@{k}": -float(big_m)}, "<=", 0.0)
    for i in cg.order:
        coeffs = {f"w@{i}": 1.0}
        for k in reachable_depots(cfg, cg, i):
            coeffs[f"x@{k}"] = coeffs.get(f"x@{k}", 0.0) - 1.0
        model.add_constraint(f"reach@{i}", coeffs, "<=", 0.0)
    if cfg.num_depots_to_open is not None:
        model.add_constraint(
            "depot_count", {f"x@{k}": 1.0 for k in depots}, "=", float(cfg.num_depots_to_open)
        )
    for idx, cut in enumerate(cuts):
        coeffs = {f"eta@{cut.scenario}": 1.0}
        for k in depots:
            lam_k = cut.lam.get(k, 0.0)
            if lam_k:
                coeffs[f"y@{k}"] = coeffs.get(f"y@{k}", 0.0) - lam_k
        for k in depots:
            sign = -1.0 if k in cut.open_set else 1.0
            if cut.eta_star:
                coeffs[f"x@{k}"] = coeffs.get(f"x@{k}", 0.0) + sign * cut.eta_star
        rhs = cut.pi_sum - cut.eta_star * len(cut.open_set)
        model.add_constraint(f"cut@{idx}", coeffs, ">=", rhs)
    for e_idx, (open_set, fleet_at) in enumerate(exclusions):
        # forbid one exact (open set, fleet) point: some depot must flip, or
        # some fleet count must move off its recorded value
        row = {}
        rhs = 1.0 - float(len(open_set))
        for k in depots:
            row[f"x@{k}"] = -1.0 if k in open_set else 1.0
        for k, y_at in fleet_at:
            if y_at < big_m:
                g = model.add_variable(f"xg@{e_idx}@{k}", lb=0, ub=1, integer=True)
                model.add_constraint(
                    f"xgdef@{e_idx}@{k}", {f"y@{k}": 1.0, f"xg@{e_idx}@{k}": -(y_at + 1.0)}, ">=", 0.0
                )
                row[f"xg@{e_idx}@{k}"] = 1.0
            if y_at >= 1:
                h = model.add_variable(f"xh@{e_idx}@{k}", lb=0, ub=1, integer=True)
                model.add_constraint(
                    f"xhdef@{e_idx}@{k}",
                    {f"y@{k}": 1.0, f"xh@{e_idx}@{k}": float(big_m - y_at + 1)},
                    "<=",
                    float(big_m),
                )
                row[f"xh@{e_idx}@{k}"] = 1.0
        model.add_constraint(f"exclude@{e_idx}", row, ">=", rhs)
    return model


def _petal(depot, client, xi, cfg, cg):
    route = build_route(depot, [client], xi, cfg, cg)
    if route_feasible(route, xi, cfg, cg):
        return route
    return None


def warm_start_pools(cfg: InstanceConfig, scenarios, graphs: GraphBundle, timer=None,
                     pricing_delta=None) -> dict:
    """Seed one pool per scenario: a zero-price route per depot plus every
    window-feasible single-client round trip."""
    t0 = _time.monotonic()
    pools = {}
    for xi in scenarios:
        pool = RoutePool(xi.id)
        pools[xi.id] = pool
        if not xi.active:
            continue
        for depot in sorted(cfg.candidate_depots):
            aux = graphs.aux(depot, xi, cfg.vehicle_capacity)
            priced = price_route(depot, DualPrices.zero(), xi, aux, cfg, delta=pricing_delta)
            if priced.found:
                pool.add(priced.route)
            for client in sorted(xi.active):
                if xi.order_size[client] > cfg.vehicle_capacity + 1e-9:
                    continue
                petal = _petal(depot, client, xi, cfg, cg=graphs.cg)
                if petal is not None:
                    pool.add(petal)
    if timer is not None:
        timer.add("warm_start", _time.monotonic() - t0)
    return pools


def _evaluate_scenario(first_stage, xi, pool, cfg, graphs, generate, budgets, timer):
    return solve_mdvrp(
        first_stage,
        xi,
        pool,
        cfg,
        graphs,
        generate_columns=generate,
        pricing_time_budget=budgets.pricing_time_budget,
        timer=timer,
    )


def _cross_seed(scenarios, pools, results, cfg, cg):
    """Recycle routes selected for one scenario into every other pool."""
    for src in scenarios:
        res = results.get(src.id)
        if res is None:
            continue
        for dst in scenarios:
            if dst.id == src.id or not dst.active:
                continue
            for route in res.selected_routes:
                recycled = recycle_route(route, dst, cg, cfg)
                if recycled.clients:
                    pools[dst.id].add(recycled)


def plan_fleet(
    cfg: InstanceConfig,
    scenarios,
    graphs: GraphBundle,
    eps: float = 1e-4,
    budgets: RunBudgets | None = None,
    accel: Accel | None = None,
    threads: int = 1,
    timer: PhaseTimer | None = None,
    pools: dict | None = None,
    cuts=None,
) -> PlanResult:
    """Run the decomposition loop until the optimality gap closes.

    Per iteration: solve the master for (depots, fleet, estimates), evaluate
    every scenario's routing cost at that first stage (with or without route
    generation per the activation switch), add a cut wherever the master
    underestimated, and tighten the incumbent bound.  Terminates when
    upper - lower <= eps * upper or a budget runs out.  ``pools`` and
    ``cuts`` resume a previous run's state.
    """
    if eps <= 0:
        raise InputError("eps must be positive")
    budgets = budgets or RunBudgets()
    accel = accel or Accel()
    check_probabilities(scenarios)
    started = _time.monotonic()
    if pools is None:
        pools = warm_start_pools(cfg, scenarios, graphs, timer=timer)
    base_pools = None if accel.pooling else {s.id: pools[s.id].copy() for s in scenarios}

    state = MasterState()
    incumbent_results: dict = {}
    trace = []
    status = "budget_exhausted"
    gap = math.inf
    seen_cuts: set = set()
    for cut in cuts or ():
        key = (
            cut.scenario,
            cut.open_set,
            round(cut.pi_sum, 9),
            tuple(sorted((k, round(v, 9)) for k, v in cut.lam.items())),
            round(cut.eta_star, 9),
        )
        if key not in seen_cuts:
            seen_cuts.add(key)
            state.cuts.append(cut)

    while state.iteration < budgets.max_iterations:
        if budgets.time_limit is not None and _time.monotonic() - started > budgets.time_limit:
            break
        master = build_master(cfg, scenarios, state.cuts, graphs.cg, state.exclusions)
        t0 = _time.monotonic()
        mres = solve_mip(master, gap_tol=1e-9)
        if timer is not None:
            timer.add("facility_location", _time.monotonic() - t0)
        if mres.status == "infeasible" and state.exclusions:
            # every first-stage point has been confirmed; the incumbent is exact
            state.lower_bound = state.upper_bound
            status = "optimal"
            break
        if mres.status != "optimal":
            raise RuntimeError(f"master solve ended with status {mres.status}")
        nu_star = mres.objective
        depots = sorted(cfg.candidate_depots)
        open_map = {k: mres.values[f"x@{k}"] > 0.5 for k in depots}
        fleet = {k: int(round(mres.values[f"y@{k}"])) for k in depots}
        covered = {i: mres.values[f"w@{i}"] > 0.5 for i in graphs.cg.order}
        eta_hat = {s.id: mres.values[f"eta@{s.id}"] for s in scenarios}
        candidate = FirstStageSolution(open=open_map, fleet=fleet, covered=covered)
        state.eta = eta_hat

        if not accel.pooling and base_pools is not None:
            for s in scenarios:
                pools[s.id] = base_pools[s.id].copy()
        generate = state.route_gen_active or not accel.activation
        pool_sizes_before = {s.id: len(pools[s.id]) for s in scenarios}

        def evaluate_batch(targets, gen):
            out = {}
            if threads > 1 and len(targets) > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool_exec:
                    futures = {
                        s.id: pool_exec.submit(
                            _evaluate_scenario, candidate, s, pools[s.id], cfg, graphs,
                            gen, budgets, timer,
                        )
                        for s in targets
                    }
                    for s in targets:
                        out[s.id] = futures[s.id].result()
            else:
                for s in targets:
                    out[s.id] = _evaluate_scenario(
                        candidate, s, pools[s.id], cfg, graphs, gen, budgets, timer
                    )
            return out

        escalated: list = []
        if generate:
            results = evaluate_batch(scenarios, True)
        else:
            # cheap screen first: when the master estimate undercuts even the
            # pool relaxation, a cut is certain and route generation runs
            # immediately; only confirmed-looking scenarios pay the integer
            # pass over the pool
            results = {}
            obvious = []
            for s in scenarios:
                if not s.active:
                    results[s.id] = _evaluate_scenario(
                        candidate, s, pools[s.id], cfg, graphs, False, budgets, timer
                    )
                    continue
                t0 = _time.monotonic()
                rrmp = solve_rrmp(pools[s.id], s, fleet, cfg)
                if timer is not None:
                    timer.add("set_covering", _time.monotonic() - t0)
                if eta_hat[s.id] < rrmp.lp_value - CUT_TOL:
                    obvious.append(s)
                else:
                    results[s.id] = _evaluate_scenario(
                        candidate, s, pools[s.id], cfg, graphs, False, budgets, timer
                    )
            escalated = [s.id for s in obvious]
            if obvious:
                results.update(evaluate_batch(obvious, True))
            # a cut row is only valid when its prices have been exposed to
            # every route of the open depots, so remaining scenarios whose
            # pool value still signals a cut are re-evaluated as well
            needs_cut = [
                s for s in scenarios
                if s.id not in escalated and eta_hat[s.id] < results[s.id].value - CUT_TOL
            ]
            if needs_cut:
                escalated.extend(s.id for s in needs_cut)
                results.update(evaluate_batch(needs_cut, True))

        open_set = frozenset(k for k, v in open_map.items() if v)
        cuts_added = 0
        underestimated = False
        for s in scenarios:
            res = results[s.id]
            if eta_hat[s.id] < res.value - CUT_TOL:
                underestimated = True
                cut = OptimalityCut(
                    scenario=s.id,
                    iteration=state.iteration,
                    pi_sum=sum(res.duals.pi.values()),
                    lam=dict(res.duals.lam),
                    open_set=open_set,
                    eta_star=res.value,
                )
                key = (
                    cut.scenario,
                    cut.open_set,
                    round(cut.pi_sum, 9),
                    tuple(sorted((k, round(v, 9)) for k, v in cut.lam.items())),
                    round(cut.eta_star, 9),
                )
                if key not in seen_cuts:
                    seen_cuts.add(key)
                    state.cuts.append(cut)
                    cuts_added += 1

        ub_candidate = nu_star - sum(
            s.probability * (eta_hat[s.id] - results[s.id].value) for s in scenarios
        )
        improved = ub_candidate < state.upper_bound - 1e-9
        if improved:
            state.upper_bound = ub_candidate
            state.incumbent = FirstStageSolution(
                open=open_map, fleet=fleet, covered=covered, objective_estimate=ub_candidate
            )
            incumbent_results = dict(results)
        state.route_gen_active = improved if accel.activation else True
        # with exclusions the master bound only covers unexplored points;
        # excluded points are accounted through the incumbent bound
        state.lower_bound = max(state.lower_bound, min(nu_star, state.upper_bound))
        exact_all = all(results[s.id].exact for s in scenarios)
        excluded_now = False
        if exact_all or not underestimated:
            # the point's value is fully confirmed (certified subproblems, or
            # the master's estimate matched), so it never needs revisiting
            state.exclusions.append((open_set, tuple(sorted(fleet.items()))))
            excluded_now = True

        if (generate or escalated) and accel.recycling:
            _cross_seed(scenarios, pools, results, cfg, graphs.cg)

        trace.append(
            {
                "iteration": state.iteration,
                "nu_star": nu_star,
                "lower_bound": state.lower_bound,
                "upper_bound": state.upper_bound,
                "route_gen": generate,
                "escalated": escalated,
                "cuts_added": cuts_added,
                "open": sorted(open_set),
                "fleet": dict(fleet),
                "eta_hat": dict(eta_hat),
                "eta_star": {s.id: results[s.id].value for s in scenarios},
                "pool_growth": {
                    s.id: len(pools[s.id]) - pool_sizes_before[s.id] for s in scenarios
                },
            }
        )
        state.iteration += 1
        gap_abs = state.upper_bound - state.lower_bound
        if gap_abs <= eps * abs(state.upper_bound) or gap_abs <= 1e-9:
            status = "optimal"
            break
        if not excluded_now and cuts_added == 0 and not improved:
            # nothing changed and the point cannot be certified: stop with
            # the achieved gap rather than looping on the same iterate
            status = "stalled"
            break

    if state.incumbent is None:
        raise RuntimeError("no incumbent found within budgets")
    denom = abs(state.upper_bound) if state.upper_bound else 1.0
    gap = max(0.0, (state.upper_bound - state.lower_bound) / denom) if denom else 0.0
    return PlanResult(
        first_stage=state.incumbent,
        state=state,
        per_scenario=incumbent_results,
        trace=trace,
        status=status,
        gap=gap,
    )
