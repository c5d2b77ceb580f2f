"""Map routes built for one demand realization into feasible routes for
another, preserving as much of the original geometry as possible.

Walking the source route in order, every client stop is replaced by the
still-unused target client whose detour cost relative to the original stop
is smallest; a candidate is kept only if the running load stays within
capacity, its window admits the arrival, and the vehicle can still reach
the depot before the depot window closes.  Mid-route depot stops are
copied through and reset the load.  Ties break on lexicographic node id.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import DemandRealization, InputError, InstanceConfig, Route, build_route


@dataclass(frozen=True)
class ReplacementCost:
    """Detour cost of substituting ``candidate`` for ``original`` between
    fixed neighbours: new legs minus the legs they replace."""

    prev: str
    original: str
    next: str
    candidate: str
    value: float

    @staticmethod
    def compute(prev, original, nxt, candidate, cg) -> "ReplacementCost":
        value = (cg.cost(prev, candidate) + cg.cost(candidate, nxt)) - (
            cg.cost(prev, original) + cg.cost(original, nxt)
        )
        return ReplacementCost(prev, original, nxt, candidate, value)


def recycle_route(
    route: Route,
    target: DemandRealization,
    cg,
    cfg: InstanceConfig,
) -> Route:
    """Rebuild ``route`` using clients of ``target``; may drop stops.

    The result always passes the route feasibility check for ``target``
    (possibly as the empty depot-to-depot route, which callers discard).
    """
    if not target.active:
        raise InputError("target realization is empty")
    depot = route.depot
    q = cfg.vehicle_capacity
    waiting = cfg.allow_waiting
    dw1, dw2 = cfg.window(depot)

    unused = set(target.active)
    stops: list[str] = []
    prev = depot
    t = cfg.depot_departure_time
    load = 0.0
    interior = route.visits[1:-1]
    for pos, original in enumerate(interior):
        if original == depot:
            # reload copies through unchanged and resets the load
            a = t + cg.time(prev, depot)
            if waiting:
                a = max(a, dw1)
            if a < dw1 - 1e-9 or a > dw2 + 1e-9:
                continue
            stops.append(depot)
            prev, t, load = depot, a, 0.0
            continue
        nxt = route.visits[pos + 2]  # interior[pos] sits at visits[pos + 1]
        best = None
        for cand in sorted(unused):
            if cand == nxt:
                # the cost formula degenerates through the zero self-leg and
                # would reward skipping ahead instead of substituting
                continue
            rc = ReplacementCost.compute(prev, original, nxt, cand, cg)
            if best is None or rc.value < best.value - 1e-12:
                best = rc
        if best is None:
            continue
        cand = best.candidate
        if load + target.order_size[cand] > q + 1e-9:
            continue
        w1, w2 = cfg.window(cand)
        a = t + cg.time(prev, cand)
        if waiting:
            a = max(a, w1)
        if a < w1 - 1e-9 or a > w2 + 1e-9:
            continue
        back = a + cg.time(cand, depot)
        if waiting:
            back = max(back, dw1)
        if back < dw1 - 1e-9 or back > dw2 + 1e-9:
            continue
        stops.append(cand)
        unused.discard(cand)
        prev, t = cand, a
        load += target.order_size[cand]
    # drop pointless leading/trailing/consecutive depot stops
    cleaned: list[str] = []
    for s in stops:
        if s == depot and (not cleaned or cleaned[-1] == depot):
            continue
        cleaned.append(s)
    while cleaned and cleaned[-1] == depot:
        cleaned.pop()
    return build_route(depot, cleaned, target, cfg, cg)
