"""Demand model fitting, day simulation and worst-case scenario selection.

The demand process is split into three parts fitted from history: a per
location, per month activity probability; a lognormal distribution for the
daily count of active clients; and a zero-truncated Poisson for the order
size.  Simulation recombines them: the lognormal draws how many clients
order, activity probabilities pick which ones, the Poisson sizes the
orders.  Scenario selection then keeps, per demand band, the simulated day
whose worst district is still busiest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .milp import LinearModel, solve_mip
from .model import DemandRealization, InputError, Network


@dataclass(frozen=True)
class DemandHistory:
    """Raw order history: one row of node quantities per date."""

    days: tuple  # ((date, {node: units}), ...)

    def __post_init__(self):
        dates = [d for d, _ in self.days]
        if len(set(dates)) != len(dates):
            raise InputError("duplicate dates in history")
        for _, orders in self.days:
            if any(v < 0 for v in orders.values()):
                raise InputError("negative order size in history")

    @property
    def num_days(self) -> int:
        return len(self.days)

    def activity_counts(self) -> dict:
        """(node, month) -> (active days, observed days in that month)."""
        month_days: dict = {}
        active: dict = {}
        for date, orders in self.days:
            month = int(str(date)[5:7])
            month_days[month] = month_days.get(month, 0) + 1
            for node, units in orders.items():
                if units > 0:
                    key = (node, month)
                    active[key] = active.get(key, 0) + 1
        return {key: (count, month_days[key[1]]) for key, count in active.items()}, month_days


@dataclass(frozen=True)
class FittedDemandModel:
    bernoulli_p: dict  # (node, month) -> activity probability
    count_mu: float  # lognormal location of the daily active-client count
    count_sigma: float
    order_size_mean: float  # underlying Poisson rate of the order size
    nodes: tuple
    order_model: str = "zero_truncated_poisson"

    def __post_init__(self):
        if not (self.count_sigma > 0):
            raise InputError("count_sigma must be positive")
        if not (self.order_size_mean > 0):
            raise InputError("order_size_mean must be positive")
        for p in self.bernoulli_p.values():
            if not (0.0 <= p <= 1.0):
                raise InputError("activity probability out of [0, 1]")

    def activity(self, node: str, month: int) -> float:
        return self.bernoulli_p.get((node, month), 0.0)


def _truncated_poisson_rate(sample_mean: float) -> float:
    """Invert m = lam / (1 - exp(-lam)) for the zero-truncated MLE."""
    if sample_mean <= 1.0 + 1e-12:
        return 1e-6
    f = lambda lam: lam / (1.0 - math.exp(-lam)) - sample_mean
    return float(brentq(f, 1e-9, sample_mean + 1.0))


def fit_demand_model(history: DemandHistory, order_model: str = "zero_truncated_poisson") -> FittedDemandModel:
    """Fit activity probabilities, the active-count lognormal and the order
    size distribution from history.

    Activity is the per-month success frequency; the count distribution is
    matched on the log moments of the positive daily counts; the order size
    rate comes from the maximum likelihood inversion over positive orders.
    """
    if history.num_days < 28:
        raise InputError("need at least 28 days of history")
    counts_by_key, _ = history.activity_counts()
    bernoulli = {key: hits / days for key, (hits, days) in counts_by_key.items()}

    daily_counts = []
    orders = []
    nodes = set()
    for _, day in history.days:
        active = [n for n, v in day.items() if v > 0]
        nodes.update(day)
        daily_counts.append(len(active))
        orders.extend(day[n] for n in active)
    if not orders:
        raise InputError("history contains no positive orders")
    positive_counts = np.array([c for c in daily_counts if c > 0], dtype=float)
    if positive_counts.size < 2:
        raise InputError("not enough active days to fit the count distribution")
    logs = np.log(positive_counts)
    mu = float(np.mean(logs))
    sigma = float(np.std(logs))
    if sigma <= 0:
        sigma = 1e-6
    mean_order = float(np.mean(orders))
    if order_model == "zero_truncated_poisson":
        rate = _truncated_poisson_rate(mean_order)
    elif order_model == "poisson":
        rate = mean_order
    else:
        raise InputError(f"unknown order model {order_model!r}")
    return FittedDemandModel(
        bernoulli_p=bernoulli,
        count_mu=mu,
        count_sigma=sigma,
        order_size_mean=max(rate, 1e-6),
        nodes=tuple(sorted(nodes)),
        order_model=order_model,
    )


def _draw_order(rng, rate, order_model):
    if order_model == "poisson":
        return max(1, int(rng.poisson(rate)))
    while True:  # zero-truncated: resample zeros
        v = int(rng.poisson(rate))
        if v > 0:
            return v


def _weighted_without_replacement(rng, nodes, weights, k):
    """Successive draws with renormalization."""
    chosen = []
    avail = list(range(len(nodes)))
    w = np.array(weights, dtype=float)
    for _ in range(k):
        probs = w[avail]
        probs = probs / probs.sum()
        pick = int(rng.choice(len(avail), p=probs))
        chosen.append(nodes[avail[pick]])
        avail.pop(pick)
    return chosen


def simulate_days(
    model: FittedDemandModel,
    n_days: int,
    month: int,
    seed: int,
    id_prefix: str | None = None,
) -> list:
    """Draw demand days, reproducibly from the seed.

    Per day: the active-client count comes from the lognormal (rounded and
    clamped to the available positive-probability clients), the clients are
    picked by activity-weighted sampling without replacement, and each
    order size is drawn from the fitted size distribution.
    """
    if n_days < 1:
        raise InputError("n_days must be >= 1")
    weights = [model.activity(n, month) for n in model.nodes]
    positive = [i for i, w in enumerate(weights) if w > 0]
    if not positive:
        raise InputError(f"no client has positive activity in month {month}")
    pool_nodes = [model.nodes[i] for i in positive]
    pool_weights = [weights[i] for i in positive]
    prefix = id_prefix if id_prefix is not None else f"m{month:02d}-s{seed}"
    seeds = np.random.SeedSequence(seed).spawn(n_days)
    out = []
    for d in range(n_days):
        rng = np.random.default_rng(seeds[d])
        raw = rng.lognormal(model.count_mu, model.count_sigma)
        count = int(round(raw))
        count = max(1, min(count, len(pool_nodes)))
        chosen = _weighted_without_replacement(rng, pool_nodes, pool_weights, count)
        orders = {c: float(_draw_order(rng, model.order_size_mean, model.order_model)) for c in chosen}
        out.append(DemandRealization(f"{prefix}-d{d:05d}", frozenset(chosen), orders))
    return out


@dataclass(frozen=True)
class Band:
    """Percentile interval of the simulated aggregate-demand distribution."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo < self.hi <= 100.0):
            raise InputError(f"bad percentile band ({self.lo}, {self.hi})")


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: tuple
    bands: tuple
    districts: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        total = sum(s.probability for s in self.scenarios)
        if abs(total - 1.0) > 1e-9:
            raise InputError(f"scenario probabilities sum to {total}")


def make_districts(net: Network, k: int = 9) -> dict:
    """Equal-size spatial cells: nodes sorted by coordinates, split k ways.

    A stand-in partition for callers without an administrative one; any
    mapping of labels to node sets can be supplied instead.
    """
    if k < 1:
        raise InputError("district count must be >= 1")
    ordered = sorted(net.nodes, key=lambda n: (n.lat, n.lon, n.id))
    k = min(k, len(ordered))
    out: dict = {}
    base = len(ordered) // k
    extra = len(ordered) % k
    pos = 0
    for j in range(k):
        size = base + (1 if j < extra else 0)
        out[f"district-{j}"] = frozenset(n.id for n in ordered[pos : pos + size])
        pos += size
    return out


def district_demand(realization: DemandRealization, districts: dict) -> dict:
    return {
        label: sum(realization.order_size.get(i, 0.0) for i in members)
        for label, members in districts.items()
    }


def _select_argmax(pool, districts):
    best_idx, best_val = -1, -math.inf
    for idx, r in enumerate(pool):
        val = min(district_demand(r, districts).values())
        if val > best_val + 1e-12:
            best_idx, best_val = idx, val
    return best_idx, best_val


def _select_mip(pool, districts):
    model = LinearModel("max")
    model.add_variable("z", lb=0.0, obj=1.0)
    for idx in range(len(pool)):
        model.add_variable(f"pick@{idx}", lb=0, ub=1, integer=True)
    for label in sorted(districts):
        coeffs = {"z": -1.0}
        for idx, r in enumerate(pool):
            d = district_demand(r, {label: districts[label]})[label]
            if d:
                coeffs[f"pick@{idx}"] = d
        model.add_constraint(f"worst@{label}", coeffs, ">=", 0.0)
    model.add_constraint("one", {f"pick@{idx}": 1.0 for idx in range(len(pool))}, "=", 1.0)
    res = solve_mip(model, gap_tol=1e-9)
    if res.status != "optimal":
        raise RuntimeError(f"scenario selection MIP ended with {res.status}")
    chosen = [idx for idx in range(len(pool)) if res.values[f"pick@{idx}"] > 0.5]
    return chosen[0], res.objective


def select_scenarios(
    sample,
    bands,
    districts: dict,
    probability_mode: str = "width",
    method: str = "argmax",
) -> ScenarioSet:
    """Pick, per band, the sampled day maximizing the minimum district demand.

    ``method="argmax"`` evaluates candidates directly (the selection model
    fixes exactly one day, so its optimum is the best single candidate);
    ``method="mip"`` solves the same model through the integer kernel.
    Band probabilities are proportional to percentile width, or uniform.
    """
    if not sample:
        raise InputError("empty sample")
    bands = tuple(b if isinstance(b, Band) else Band(*b) for b in bands)
    for a in bands:
        for b in bands:
            if a is not b and a.lo < b.hi and b.lo < a.hi:
                raise InputError("bands overlap")
    aggregates = np.array([r.total_demand for r in sample])
    chosen = []
    for band in bands:
        lo_val = float(np.percentile(aggregates, band.lo))
        hi_val = float(np.percentile(aggregates, band.hi))
        pool = [
            r
            for r, agg in zip(sample, aggregates)
            if lo_val - 1e-12 <= agg <= hi_val + 1e-12
        ]
        if not pool:
            raise InputError(f"no sampled day falls in band ({band.lo}, {band.hi})")
        if method == "argmax":
            idx, _ = _select_argmax(pool, districts)
        elif method == "mip":
            idx, _ = _select_mip(pool, districts)
        else:
            raise InputError(f"unknown selection method {method!r}")
        chosen.append(pool[idx])
    if probability_mode == "width":
        widths = [b.hi - b.lo for b in bands]
    elif probability_mode == "uniform":
        widths = [1.0] * len(bands)
    else:
        raise InputError(f"unknown probability mode {probability_mode!r}")
    total = sum(widths)
    scenarios = tuple(
        r.with_probability(w / total) for r, w in zip(chosen, widths)
    )
    return ScenarioSet(scenarios=scenarios, bands=bands, districts=dict(districts))
