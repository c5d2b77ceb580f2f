"""Core domain types: transport network, instance configuration, demand
realizations, first-stage decisions and vehicle routes.

All types are immutable after construction and safe to share between
worker threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping


class InputError(ValueError):
    """Malformed input, as opposed to a feasibility verdict."""


class UnknownNodeError(InputError):
    """A node id that is not part of the network."""


class InactiveNodeError(InputError):
    """A route visits a node that placed no order in the realization."""


@dataclass(frozen=True)
class Node:
    id: str
    lat: float
    lon: float


@dataclass(frozen=True)
class Arc:
    tail: str
    head: str
    miles: float
    hours: float
    dollars: float


@dataclass(frozen=True)
class Network:
    """Directed transport network with distance, time and cost per arc."""

    nodes: tuple[Node, ...]
    arcs: tuple[Arc, ...]

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise InputError("duplicate node ids")
        known = set(ids)
        for a in self.arcs:
            if a.tail not in known or a.head not in known:
                raise UnknownNodeError(f"arc ({a.tail}, {a.head}) references an undeclared node")
            if a.tail == a.head:
                raise InputError(f"self-loop arc at {a.tail}")
            if a.miles < 0 or a.hours < 0 or a.dollars < 0:
                raise InputError(f"negative attribute on arc ({a.tail}, {a.head})")

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise UnknownNodeError(node_id)


@dataclass(frozen=True)
class InstanceConfig:
    """Instance-wide parameters: depots, fleet, capacity, windows, penalties."""

    candidate_depots: frozenset[str]
    depot_daily_cost: Mapping[str, float]
    vehicle_daily_cost: float
    max_vehicles_per_depot: int
    vehicle_capacity: float
    time_windows: Mapping[str, tuple[float, float]]
    coverage_radius: float
    coverage_penalty: Mapping[str, float]
    depot_departure_time: float = 0.0
    num_depots_to_open: int | None = None
    allow_waiting: bool = False
    unserved_cost: float | None = None
    emission_factor_kg_per_mile: float = 1.617

    def __post_init__(self):
        if set(self.depot_daily_cost) != set(self.candidate_depots):
            raise InputError("depot_daily_cost keys must equal candidate_depots")
        if any(c < 0 for c in self.depot_daily_cost.values()):
            raise InputError("negative depot cost")
        if self.vehicle_daily_cost < 0:
            raise InputError("negative vehicle cost")
        if self.max_vehicles_per_depot < 1:
            raise InputError("max_vehicles_per_depot must be >= 1")
        if self.vehicle_capacity <= 0:
            raise InputError("vehicle_capacity must be > 0")
        for node, (w1, w2) in self.time_windows.items():
            if w1 > w2:
                raise InputError(f"empty time window at {node}")
        if self.depot_departure_time < 0:
            raise InputError("depot_departure_time must be >= 0")
        if self.coverage_radius <= 0:
            raise InputError("coverage_radius must be > 0")
        if any(p < 0 for p in self.coverage_penalty.values()):
            raise InputError("negative coverage penalty")
        if self.num_depots_to_open is not None and not (
            0 <= self.num_depots_to_open <= len(self.candidate_depots)
        ):
            raise InputError("num_depots_to_open out of range")

    def window(self, node_id: str) -> tuple[float, float]:
        """Time window of a node; nodes without an entry are unconstrained."""
        return self.time_windows.get(node_id, (0.0, math.inf))

    def penalty(self, node_id: str) -> float:
        return self.coverage_penalty.get(node_id, 0.0)

    def serve_penalty(self) -> float:
        """Cost of leaving one client order unserved in a routing subproblem."""
        if self.unserved_cost is not None:
            return self.unserved_cost
        top = max(self.coverage_penalty.values(), default=0.0)
        return 10.0 * top if top > 0 else 1e6


@dataclass(frozen=True)
class DemandRealization:
    """One realized demand day: the active clients and their order sizes."""

    id: str
    active: frozenset[str]
    order_size: Mapping[str, float]
    probability: float | None = None

    def __post_init__(self):
        if set(self.order_size) != set(self.active):
            raise InputError("order_size keys must equal the active set")
        if any(d <= 0 for d in self.order_size.values()):
            raise InputError("order sizes must be positive; omit inactive clients")
        if self.probability is not None and not (0.0 <= self.probability <= 1.0):
            raise InputError("probability must lie in [0, 1]")

    @property
    def total_demand(self) -> float:
        return sum(self.order_size.values())

    def with_probability(self, p: float) -> "DemandRealization":
        return DemandRealization(self.id, self.active, dict(self.order_size), p)


@dataclass(frozen=True)
class FirstStageSolution:
    """Depot-open vector, fleet vector and coverage indicators."""

    open: Mapping[str, bool]
    fleet: Mapping[str, int]
    covered: Mapping[str, bool]
    objective_estimate: float | None = None

    def __post_init__(self):
        for k, y in self.fleet.items():
            if y < 0:
                raise InputError(f"negative fleet at {k}")
            if y > 0 and not self.open.get(k, False):
                raise InputError(f"vehicles allocated at closed depot {k}")

    def open_depots(self) -> list[str]:
        return sorted(k for k, v in self.open.items() if v)

    def total_fleet(self) -> int:
        return sum(self.fleet.values())

    def validate(self, cfg: InstanceConfig) -> None:
        m = cfg.max_vehicles_per_depot
        for k, y in self.fleet.items():
            if y > m * int(bool(self.open.get(k, False))):
                raise InputError(f"fleet at {k} exceeds {m} x open indicator")


@dataclass(frozen=True)
class Route:
    """A depot-anchored visit sequence.

    ``visits`` is the full node sequence including the leading and trailing
    depot; interior occurrences of the depot are mid-route reloads that reset
    the vehicle load.  Cached cost, per-subtrip loads and arrival times are
    computed once at construction (see :func:`build_route`).
    """

    depot: str
    visits: tuple[str, ...]
    cost: float
    subtrip_loads: tuple[float, ...]
    arrival_times: tuple[float, ...]
    realization_id: str

    def __post_init__(self):
        if len(self.visits) < 2 or self.visits[0] != self.depot or self.visits[-1] != self.depot:
            raise InputError("route must start and end at its depot")
        clients = [v for v in self.visits if v != self.depot]
        if len(set(clients)) != len(clients):
            raise InputError("route visits a client more than once")

    @property
    def clients(self) -> tuple[str, ...]:
        """Demand nodes visited, in order (reload stops excluded)."""
        return tuple(v for v in self.visits if v != self.depot)

    @property
    def reload_count(self) -> int:
        return sum(1 for v in self.visits[1:-1] if v == self.depot)

    def key(self) -> tuple:
        return (self.depot, self.visits)


@dataclass(frozen=True)
class FeasibilityCheck:
    """Verdict of a route feasibility test, naming the first violation."""

    ok: bool
    condition: str | None = None  # "capacity" or "time_window"
    node: str | None = None
    position: int | None = None

    def __bool__(self) -> bool:
        return self.ok


FEASIBLE = FeasibilityCheck(True)

_TOL = 1e-9


def build_route(depot, stops, xi, cfg, cg, realization_id=None):
    """Assemble a :class:`Route` from a depot and its interior stop sequence.

    ``stops`` lists the nodes strictly between departure and return; a depot
    id inside ``stops`` is a reload.  Cost, subtrip loads and arrival times
    are cached on the result.  Arrival times honour ``cfg.allow_waiting``.
    Raises :class:`InactiveNodeError` for stops outside ``xi.active``.
    """
    visits = (depot,) + tuple(stops) + (depot,)
    for v in visits:
        if not cg.has_node(v):
            raise UnknownNodeError(v)
    loads = []
    current = 0.0
    for v in stops:
        if v == depot:
            loads.append(current)
            current = 0.0
            continue
        if v not in xi.active:
            raise InactiveNodeError(f"{v} is not active in realization {xi.id}")
        current += xi.order_size[v]
    loads.append(current)
    arrivals = [cfg.depot_departure_time]
    t = cfg.depot_departure_time
    cost = 0.0
    for prev, cur in zip(visits, visits[1:]):
        t += cg.time(prev, cur)
        cost += cg.cost(prev, cur)
        if cfg.allow_waiting:
            t = max(t, cfg.window(cur)[0])
        arrivals.append(t)
    return Route(
        depot=depot,
        visits=visits,
        cost=cost,
        subtrip_loads=tuple(loads),
        arrival_times=tuple(arrivals),
        realization_id=xi.id if realization_id is None else realization_id,
    )


def route_cost(route: Route, cg) -> float:
    """Sum of shortest-path travel costs over consecutive visit pairs."""
    total = 0.0
    for prev, cur in zip(route.visits, route.visits[1:]):
        if not (cg.has_node(prev) and cg.has_node(cur)):
            raise UnknownNodeError(f"({prev}, {cur})")
        total += cg.cost(prev, cur)
    return total


def route_distance(route: Route, cg) -> float:
    """Sum of shortest-path miles over consecutive visit pairs."""
    return sum(cg.distance(p, c) for p, c in zip(route.visits, route.visits[1:]))


def route_feasible(route: Route, xi: DemandRealization, cfg: InstanceConfig, cg) -> FeasibilityCheck:
    """Check vehicle capacity per subtrip and the time window at every stop.

    Arrival at position ``i`` is the departure time plus the travel times of
    all preceding legs; with ``allow_waiting`` the vehicle may idle until a
    window opens, otherwise an early arrival is infeasible.  Returns the
    first violated condition in traversal order.  Visiting an inactive node
    is an input error, not an infeasibility.
    """
    if route.depot not in cfg.candidate_depots:
        raise InputError(f"{route.depot} is not a candidate depot")
    for v in route.visits:
        if not cg.has_node(v):
            raise UnknownNodeError(v)
    for v in route.clients:
        if v not in xi.active:
            raise InactiveNodeError(f"{v} is not active in realization {xi.id}")

    q = cfg.vehicle_capacity
    t = cfg.depot_departure_time
    load = 0.0
    for pos in range(1, len(route.visits)):
        prev, cur = route.visits[pos - 1], route.visits[pos]
        t += cg.time(prev, cur)
        w1, w2 = cfg.window(cur)
        if cfg.allow_waiting:
            t = max(t, w1)
        if t < w1 - _TOL or t > w2 + _TOL:
            return FeasibilityCheck(False, "time_window", cur, pos)
        if cur == route.depot:
            load = 0.0
        else:
            load += xi.order_size[cur]
            if load > q + _TOL:
                return FeasibilityCheck(False, "capacity", cur, pos)
    return FEASIBLE


def first_stage_cost(sol: FirstStageSolution, cfg: InstanceConfig) -> float:
    """Daily fixed cost: depot maintenance plus vehicle maintenance."""
    sol.validate(cfg)
    depot_cost = sum(cfg.depot_daily_cost[k] for k, v in sol.open.items() if v)
    vehicle_cost = cfg.vehicle_daily_cost * sum(sol.fleet.values())
    return depot_cost + vehicle_cost
