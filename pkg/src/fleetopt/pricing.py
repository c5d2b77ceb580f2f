"""Exact minimum reduced-cost route search for one depot and one realization.

The search runs a depth-first exploration of the unfolded depot graph
(start copy, client nodes, reload copies, end copy) with three pruning
rules: resource infeasibility (capacity with no reachable reload, or a
closed time window), a lower-bound test against a time-indexed completion
bound table, and an on-path visited set that enforces elementarity.

The bound table relaxes elementarity and capacity, so its entries are
optimistic and pruning never discards an improving route.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass

import numpy as np

from .graphs import AuxiliaryGraph
from .model import DemandRealization, InputError, InstanceConfig, Route, build_route

_TIE_TOL = 1e-12
NEGATIVE_TOL = 1e-6


@dataclass(frozen=True)
class DualPrices:
    """Client and depot prices taken from a set-covering relaxation."""

    pi: dict
    lam: dict

    @staticmethod
    def zero() -> "DualPrices":
        return DualPrices({}, {})

    def pi_of(self, client: str) -> float:
        return self.pi.get(client, 0.0)

    def lam_of(self, depot: str) -> float:
        return self.lam.get(depot, 0.0)

    def validate(self, active, tol: float = 1e-6) -> None:
        """Sign convention: client prices >= 0, depot prices <= 0."""
        for i, v in self.pi.items():
            if i not in active:
                raise InputError(f"price for inactive client {i}")
            if v < -tol:
                raise InputError(f"negative client price at {i}: {v}")
        for k, v in self.lam.items():
            if v > tol:
                raise InputError(f"positive depot price at {k}: {v}")


class BoundTable:
    """Per-node, per-grid-time lower bounds on the best completion cost.

    ``bound(node_idx, t)`` is valid for any partial path standing at the
    node with elapsed time at most the grid point at or above ``t``.  Rows
    are the clients in order, then the reload copy, then the start copy,
    then the end copy (identically zero: the journey is over there).  The
    last grid cell is fully time-relaxed so lookups beyond the horizon
    stay valid.
    """

    def __init__(self, delta: float, grid_count: int, table: np.ndarray):
        self.delta = delta
        self.grid_count = grid_count  # cells are 0..grid_count
        self.table = np.vstack([table, np.zeros((1, table.shape[1]))])
        self.end_row = self.table.shape[0] - 1

    def cell(self, t: float) -> int:
        if self.grid_count == 0 or self.delta <= 0:
            return 0
        return min(self.grid_count, max(0, int(math.ceil(t / self.delta - 1e-12))))

    def bound(self, node_idx: int, t: float) -> float:
        return float(self.table[node_idx, self.cell(t)])


def _leg_allowed(tau, w1, w2, t_cell, waiting, relaxed):
    if tau > w2 + 1e-9:
        return False
    if waiting or relaxed:
        return True
    return t_cell + tau >= w1 - 1e-9


def compute_bounds(
    aux: AuxiliaryGraph,
    duals: DualPrices,
    cfg: InstanceConfig,
    delta: float | None = None,
) -> BoundTable:
    """Backward passes over the time grid, relaxing elementarity and capacity.

    Node indexing: clients in ``aux.clients`` order, then one shared reload
    row, then the start row.
    """
    clients = aux.clients
    k = len(clients)
    depot = aux.depot
    cg = aux.cg
    waiting = cfg.allow_waiting

    w1 = np.array([cfg.window(c)[0] for c in clients])
    w2 = np.array([cfg.window(c)[1] for c in clients])
    dw1, dw2 = cfg.window(depot)

    finite_close = [x for x in list(w2) + [dw2] if math.isfinite(x)]
    horizon = max(finite_close) if finite_close else 0.0
    horizon = max(horizon, cfg.depot_departure_time)
    if delta is None:
        delta = horizon / 20.0 if horizon > 0 else 0.0
    if delta is not None and delta < 0:
        raise InputError("delta must be positive")
    grid_count = int(math.ceil(horizon / delta - 1e-12)) if delta and horizon > 0 else 0

    num_nodes = k + 2  # clients, reload, start
    reload_idx, start_idx = k, k + 1
    pi = np.array([duals.pi_of(c) for c in clients])

    # travel matrices: rows are "from" nodes, columns are client targets
    t_client = np.empty((num_nodes, k))
    w_client = np.empty((num_nodes, k))
    for i, ci in enumerate(clients):
        for j, cj in enumerate(clients):
            t_client[i, j] = cg.time(ci, cj) if i != j else math.inf
            w_client[i, j] = (cg.cost(ci, cj) - pi[j]) if i != j else math.inf
    for row in (reload_idx, start_idx):
        for j, cj in enumerate(clients):
            t_client[row, j] = cg.time(depot, cj)
            w_client[row, j] = cg.cost(depot, cj) - pi[j]
    t_end = np.array([cg.time(c, depot) for c in clients])
    w_end = np.array([cg.cost(c, depot) for c in clients])

    has_reload = aux.reload_count > 0
    max_legs = k + aux.reload_count + 1
    inf = math.inf
    w2_ok = t_client <= w2[None, :] + 1e-9  # optimistic lower-end window test
    end_w2_ok = t_end <= dw2 + 1e-9

    table = np.full((num_nodes, grid_count + 1), inf)
    for g in range(grid_count, -1, -1):
        t_cell = g * delta if grid_count else 0.0
        relaxed = g == grid_count  # last cell ignores window-opening times
        if waiting or relaxed:
            allowed = w2_ok.copy()
            end_allowed = end_w2_ok.copy()
        else:
            allowed = w2_ok & (t_cell + t_client >= w1[None, :] - 1e-9)
            end_allowed = end_w2_ok & (t_cell + t_end >= dw1 - 1e-9)
        arrive = t_cell + t_client
        end_arrive = t_cell + t_end
        if waiting:
            arrive = np.maximum(arrive, w1[None, :])
            end_arrive = np.maximum(end_arrive, dw1)
        if grid_count:
            with np.errstate(invalid="ignore"):
                g2 = np.ceil(arrive / delta - 1e-12)
                g2_end = np.ceil(end_arrive / delta - 1e-12)
            g2 = np.clip(np.nan_to_num(g2, nan=grid_count, posinf=grid_count), 0, grid_count).astype(int)
            g2_end = np.clip(np.nan_to_num(g2_end, nan=grid_count, posinf=grid_count), 0, grid_count).astype(int)
        else:
            g2 = np.zeros_like(arrive, dtype=int)
            g2_end = np.zeros_like(end_arrive, dtype=int)

        cur = np.full(num_nodes, inf)
        cur[:k] = np.where(end_allowed, w_end, inf)  # closing leg
        later = allowed & (g2 > g)
        if later.any():
            landed = w_client + table[np.arange(k)[None, :], g2]
            cur = np.minimum(cur, np.where(later, landed, inf).min(axis=1))
        intra_mask = allowed & (g2 <= g)
        end_later = end_allowed & (g2_end > g) if has_reload else None
        if has_reload and end_later.any():
            landed = w_end + table[reload_idx, g2_end]
            cur[:k] = np.minimum(cur[:k], np.where(end_later, landed, inf))
        end_intra = end_allowed & (g2_end <= g) if has_reload else None

        # bounded relaxation of same-cell legs; true completions never use
        # more than max_legs arcs, so max_legs passes keep the bound valid
        if intra_mask.any() or (has_reload and end_intra.any()):
            for _ in range(max_legs):
                step = np.where(intra_mask, w_client + cur[None, :k], inf).min(axis=1)
                nxt = np.minimum(cur, step)
                if has_reload:
                    via = np.where(end_intra, w_end + cur[reload_idx], inf)
                    nxt[:k] = np.minimum(nxt[:k], via)
                if np.allclose(nxt, cur, rtol=0.0, atol=1e-15, equal_nan=True):
                    cur = nxt
                    break
                cur = nxt
        table[:, g] = cur
    return BoundTable(delta if delta else 0.0, grid_count, table)


@dataclass
class PricingResult:
    route: Route | None
    reduced_cost: float | None
    optimal: bool = True
    extra_routes: list = None  # additional negative-cost routes seen en route

    @property
    def found(self) -> bool:
        return self.route is not None


def count_bounds(aux: AuxiliaryGraph, duals: DualPrices, cfg: InstanceConfig):
    """Lower bounds on completion cost indexed by remaining client visits.

    Relaxes time, capacity, elementarity and the reload budget, so each
    entry is optimistic; unlike the time-grid table it cannot loop through
    a profitable client pair more often than the visit budget allows.
    """
    clients = aux.clients
    k = len(clients)
    depot = aux.depot
    cg = aux.cg
    pi = [duals.pi_of(c) for c in clients]
    w = [[(cg.cost(ci, cj) - pi[j]) if i != j else math.inf for j, cj in enumerate(clients)]
         for i, ci in enumerate(clients)]
    wd = [cg.cost(depot, cj) - pi[j] for j, cj in enumerate(clients)]
    back = [cg.cost(ci, depot) for ci in clients]
    allow_reload = aux.reload_count > 0
    # rows: clients 0..k-1, depot copies at k (start and reload alike)
    table = [[0.0] * (k + 1) for _ in range(k + 1)]
    for n in range(k):
        table[0][n] = back[n]
    table[0][k] = math.inf  # a depot copy must still visit someone
    for m in range(1, k + 1):
        prev = table[m - 1]
        via_depot = min((wd[j] + prev[j] for j in range(k)), default=math.inf)
        row = table[m]
        for n in range(k):
            best = back[n]
            wn = w[n]
            for j in range(k):
                cand = wn[j] + prev[j]
                if cand < best:
                    best = cand
            if allow_reload:
                cand = back[n] + via_depot
                if cand < best:
                    best = cand
            row[n] = best
        row[k] = via_depot
    return table


def price_route(
    depot: str,
    duals: DualPrices,
    xi: DemandRealization,
    aux: AuxiliaryGraph,
    cfg: InstanceConfig,
    delta: float | None = None,
    bounds: BoundTable | None = None,
    use_bounds: bool = True,
    time_budget: float | None = None,
    collect: int = 0,
) -> PricingResult:
    """Find a feasible route of the depot minimizing the reduced cost.

    The reduced cost of a route is its travel cost minus the depot price
    and minus the prices of all visited clients.  The search is exact:
    when it finishes within the time budget the returned route minimizes
    the reduced cost over every feasible route, and ``route=None`` means
    no feasible route exists at all.  Ties break toward fewer visits and
    then lexicographic visit order.  With ``collect`` > 0, up to that many
    further negative-cost complete routes seen during the search are
    returned as well (useful for adding several columns per call).
    """
    if aux.depot != depot:
        raise InputError("auxiliary graph was built for a different depot")
    duals.validate(xi.active)
    clients = aux.clients
    k = len(clients)
    cg = aux.cg
    q = cfg.vehicle_capacity
    waiting = cfg.allow_waiting
    t0 = cfg.depot_departure_time
    max_reloads = aux.reload_count
    demand = [aux.demand[c] for c in clients]
    pi = [duals.pi_of(c) for c in clients]
    dw1, dw2 = cfg.window(depot)
    win_lo = [cfg.window(c)[0] for c in clients]
    win_hi = [cfg.window(c)[1] for c in clients]
    t_mat = [[(cg.time(ci, cj) if i != j else math.inf) for j, cj in enumerate(clients)]
             for i, ci in enumerate(clients)]
    c_mat = [[(cg.cost(ci, cj) if i != j else math.inf) for j, cj in enumerate(clients)]
             for i, ci in enumerate(clients)]
    t_mat.append([cg.time(depot, cj) for cj in clients])  # row k: from the depot
    c_mat.append([cg.cost(depot, cj) for cj in clients])
    w_mat = [[c_mat[i][j] - pi[j] for j in range(k)] for i in range(k + 1)]
    t_back = [cg.time(c, depot) for c in clients]
    c_back = [cg.cost(c, depot) for c in clients]

    if bounds is None and use_bounds:
        bounds = compute_bounds(aux, duals, cfg, delta)
    cnt_bound = count_bounds(aux, duals, cfg) if use_bounds else None
    time_table = bounds.table.tolist() if use_bounds else None
    grid_count = bounds.grid_count if use_bounds else 0
    grid_delta = bounds.delta if use_bounds else 0.0
    full_mask = (1 << k) - 1

    # static child order per row: optimistic one-step score, index tiebreak
    if use_bounds:
        base = cnt_bound[k]
        order = [
            sorted(range(k), key=lambda j, i=i: (w_mat[i][j] + base[j], j))
            for i in range(k + 1)
        ]
    else:
        order = [list(range(k)) for _ in range(k + 1)]

    deadline = _time.monotonic() + time_budget if time_budget is not None else None
    state = {
        "best": math.inf,
        "best_path": None,
        "best_key": None,
        "expanded": 0,
        "timed_out": False,
        "seen": {},  # visits tuple -> best negative cost, for collection
    }
    keep_extra = collect > 0

    def out_of_time():
        if deadline is None:
            return False
        state["expanded"] += 1
        if state["expanded"] % 256 == 0 and _time.monotonic() > deadline:
            state["timed_out"] = True
        return state["timed_out"]

    def consider(cost, path):
        if keep_extra and cost < -NEGATIVE_TOL:
            key = tuple(path)
            prior = state["seen"].get(key)
            if prior is None or cost < prior:
                state["seen"][key] = cost
        key = (sum(1 for p in path if p >= 0), tuple(path))
        if cost < state["best"] - _TIE_TOL or (
            cost < state["best"] + _TIE_TOL
            and (state["best_key"] is None or key < state["best_key"])
        ):
            state["best"] = min(cost, state["best"])
            state["best_path"] = list(path)
            state["best_key"] = key

    def lower_bound(row_idx, t, remaining):
        # max of the time-grid bound and the visit-count bound
        if grid_count:
            cell = int(math.ceil(t / grid_delta - 1e-12))
            if cell < 0:
                cell = 0
            elif cell > grid_count:
                cell = grid_count
        else:
            cell = 0
        tb = time_table[row_idx][cell]
        cb = cnt_bound[remaining][k if row_idx >= k else row_idx]
        return tb if tb > cb else cb

    def search(cur, t, load, reloads, visited_mask, cost, path, from_depot):
        # cur: client index; from_depot marks start/reload states (row k)
        if state["timed_out"] or out_of_time():
            return
        row = k if from_depot else cur
        if not from_depot:
            a = t + t_back[cur]
            if waiting and a < dw1:
                a = dw1
            if dw1 - 1e-9 <= a <= dw2 + 1e-9:
                consider(cost + c_back[cur], path)
        if use_bounds:
            remaining = k - bin(visited_mask).count("1")
            # time table rows: clients, then reload (k), then start (k + 1)
            trow = (k + 1) if cur < 0 else (k if from_depot else cur)
            if cost + lower_bound(trow, t, remaining) >= state["best"] - _TIE_TOL:
                return
        t_row = t_mat[row]
        w_row = w_mat[row]
        for j in order[row]:
            if visited_mask >> j & 1:
                continue
            if load + demand[j] > q + 1e-9:
                continue
            a = t + t_row[j]
            lo = win_lo[j]
            if waiting and a < lo:
                a = lo
            if a < lo - 1e-9 or a > win_hi[j] + 1e-9:
                continue
            path.append(j)
            search(j, a, load + demand[j], reloads, visited_mask | (1 << j),
                   cost + w_row[j], path, False)
            path.pop()
        if not from_depot and reloads < max_reloads and visited_mask != full_mask:
            a = t + t_back[cur]
            if waiting and a < dw1:
                a = dw1
            if dw1 - 1e-9 <= a <= dw2 + 1e-9:
                path.append(-1)
                search(cur, a, 0.0, reloads + 1, visited_mask, cost + c_back[cur], path, True)
                path.pop()

    search(-1, t0, 0.0, 0, 0, -duals.lam_of(depot), [], True)

    timed_out = state["timed_out"]
    if state["best_path"] is None:
        return PricingResult(None, None, optimal=not timed_out, extra_routes=[])
    best_key = tuple(state["best_path"])

    def to_route(path):
        stops = [clients[p] if p >= 0 else depot for p in path]
        return build_route(depot, stops, xi, cfg, cg)

    route = to_route(state["best_path"])
    reduced = route.cost - duals.lam_of(depot) - sum(duals.pi_of(c) for c in route.clients)
    if abs(reduced - state["best"]) > 1e-9:
        raise RuntimeError(
            f"reduced-cost mismatch: search {state['best']}, recomputed {reduced}"
        )
    extras = []
    if keep_extra:
        ranked = sorted(
            ((c, p) for p, c in state["seen"].items() if p != best_key),
            key=lambda item: item[0],
        )
        extras = [to_route(list(p)) for _, p in ranked[:collect]]
    return PricingResult(route, reduced, optimal=not timed_out, extra_routes=extras)
