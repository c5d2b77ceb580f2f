"""Versioned file formats for every pipeline stage.

All structured files are JSON with a ``format_version`` field; the demand
history is delimited text.  See the README format reference for the field
lists.  Loaders raise :class:`FormatError` with the offending file and
field rather than propagating raw parse errors.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

from .demand import Band, DemandHistory, FittedDemandModel, ScenarioSet
from .model import (
    Arc,
    DemandRealization,
    FirstStageSolution,
    InputError,
    InstanceConfig,
    Network,
    Node,
    Route,
    build_route,
)
from .routing import RoutePool

FORMAT_VERSION = 1


class FormatError(InputError):
    """A file does not match its declared or expected format."""


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_json(path, kind: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise FormatError(f"{path}: expected a JSON object")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: format_version {version!r}, expected {FORMAT_VERSION}")
    if data.get("kind") != kind:
        raise FormatError(f"{path}: kind {data.get('kind')!r}, expected {kind!r}")
    return data


def _write_json(path, kind: str, payload: dict) -> None:
    doc = {"format_version": FORMAT_VERSION, "kind": kind}
    doc.update(payload)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- network ---------------------------------------------------------------

def save_network(net: Network, path) -> None:
    _write_json(
        path,
        "network",
        {
            "nodes": [{"id": n.id, "lat": n.lat, "lon": n.lon} for n in net.nodes],
            "arcs": [
                {"tail": a.tail, "head": a.head, "miles": a.miles, "hours": a.hours, "dollars": a.dollars}
                for a in net.arcs
            ],
        },
    )


def load_network(path) -> Network:
    data = _read_json(path, "network")
    try:
        nodes = tuple(Node(str(n["id"]), float(n["lat"]), float(n["lon"])) for n in data["nodes"])
        arcs = tuple(
            Arc(str(a["tail"]), str(a["head"]), float(a["miles"]), float(a["hours"]), float(a["dollars"]))
            for a in data["arcs"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad node or arc entry ({exc})") from exc
    return Network(nodes, arcs)


# -- instance configuration ------------------------------------------------

def save_config(cfg: InstanceConfig, network_file: str, path) -> None:
    _write_json(
        path,
        "instance_config",
        {
            "network_file": network_file,
            "candidate_depots": sorted(cfg.candidate_depots),
            "depot_daily_cost": dict(cfg.depot_daily_cost),
            "vehicle_daily_cost": cfg.vehicle_daily_cost,
            "max_vehicles_per_depot": cfg.max_vehicles_per_depot,
            "vehicle_capacity": cfg.vehicle_capacity,
            "time_windows": {k: list(v) for k, v in cfg.time_windows.items()},
            "depot_departure_time": cfg.depot_departure_time,
            "coverage_radius": cfg.coverage_radius,
            "coverage_penalty": dict(cfg.coverage_penalty),
            "num_depots_to_open": cfg.num_depots_to_open,
            "allow_waiting": cfg.allow_waiting,
            "unserved_cost": cfg.unserved_cost,
            "emission_factor_kg_per_mile": cfg.emission_factor_kg_per_mile,
        },
    )


def load_config(path):
    """Read an instance config; returns (cfg, network_path).

    ``time_windows`` and ``coverage_penalty`` accept a ``default`` entry
    that is expanded over all network nodes at load time.
    """
    path = Path(path)
    data = _read_json(path, "instance_config")
    try:
        network_path = (path.parent / data["network_file"]).resolve()
        net = load_network(network_path)
        windows = {}
        default_window = None
        for key, value in data.get("time_windows", {}).items():
            if key == "default":
                default_window = (float(value[0]), float(value[1]))
            else:
                windows[key] = (float(value[0]), float(value[1]))
        if default_window is not None:
            for n in net.node_ids:
                windows.setdefault(n, default_window)
        penalties = {}
        default_penalty = None
        for key, value in data.get("coverage_penalty", {}).items():
            if key == "default":
                default_penalty = float(value)
            else:
                penalties[key] = float(value)
        if default_penalty is not None:
            for n in net.node_ids:
                penalties.setdefault(n, default_penalty)
        cfg = InstanceConfig(
            candidate_depots=frozenset(str(k) for k in data["candidate_depots"]),
            depot_daily_cost={str(k): float(v) for k, v in data["depot_daily_cost"].items()},
            vehicle_daily_cost=float(data["vehicle_daily_cost"]),
            max_vehicles_per_depot=int(data["max_vehicles_per_depot"]),
            vehicle_capacity=float(data["vehicle_capacity"]),
            time_windows=windows,
            coverage_radius=float(data["coverage_radius"]),
            coverage_penalty=penalties,
            depot_departure_time=float(data.get("depot_departure_time", 0.0)),
            num_depots_to_open=(
                int(data["num_depots_to_open"]) if data.get("num_depots_to_open") is not None else None
            ),
            allow_waiting=bool(data.get("allow_waiting", False)),
            unserved_cost=(
                float(data["unserved_cost"]) if data.get("unserved_cost") is not None else None
            ),
            emission_factor_kg_per_mile=float(data.get("emission_factor_kg_per_mile", 1.617)),
        )
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"{path}: bad config field ({exc})") from exc
    return cfg, net, network_path


# -- demand history (delimited text) ----------------------------------------

def save_history(history: DemandHistory, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "node", "units"])
        for date, orders in history.days:
            for node in sorted(orders):
                if orders[node] > 0:
                    writer.writerow([date, node, orders[node]])


def load_history(path) -> DemandHistory:
    days: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["date", "node", "units"]:
            raise FormatError(f"{path}: expected header 'date,node,units'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                date, node, units = row[0].strip(), row[1].strip(), float(row[2])
            except (IndexError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad row {row!r}") from exc
            days.setdefault(date, {})[node] = units
    if not days:
        raise FormatError(f"{path}: no data rows")
    ordered = tuple(sorted(days.items()))
    return DemandHistory(tuple((d, dict(o)) for d, o in ordered))


# -- fitted demand model -----------------------------------------------------

def save_model(model: FittedDemandModel, path, manifest: str | None = None) -> None:
    _write_json(
        path,
        "demand_model",
        {
            "activity": [
                {"node": node, "month": month, "p": p}
                for (node, month), p in sorted(model.bernoulli_p.items())
            ],
            "count_mu": model.count_mu,
            "count_sigma": model.count_sigma,
            "order_size_mean": model.order_size_mean,
            "order_model": model.order_model,
            "nodes": list(model.nodes),
            "manifest": manifest,
        },
    )


def load_model(path) -> FittedDemandModel:
    data = _read_json(path, "demand_model")
    try:
        return FittedDemandModel(
            bernoulli_p={(str(e["node"]), int(e["month"])): float(e["p"]) for e in data["activity"]},
            count_mu=float(data["count_mu"]),
            count_sigma=float(data["count_sigma"]),
            order_size_mean=float(data["order_size_mean"]),
            nodes=tuple(str(n) for n in data["nodes"]),
            order_model=str(data.get("order_model", "zero_truncated_poisson")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad model field ({exc})") from exc


# -- demand realizations (samples, scenario sets, single days) ---------------

def _realization_payload(r: DemandRealization) -> dict:
    out = {"id": r.id, "orders": {n: r.order_size[n] for n in sorted(r.active)}}
    if r.probability is not None:
        out["probability"] = r.probability
    return out


def _realization_from(entry, where) -> DemandRealization:
    try:
        orders = {str(k): float(v) for k, v in entry["orders"].items()}
        return DemandRealization(
            id=str(entry["id"]),
            active=frozenset(orders),
            order_size=orders,
            probability=(float(entry["probability"]) if "probability" in entry else None),
        )
    except (KeyError, TypeError, ValueError, InputError) as exc:
        raise FormatError(f"{where}: bad realization entry ({exc})") from exc


def save_realizations(realizations, path, meta: dict | None = None, manifest: str | None = None) -> None:
    _write_json(
        path,
        "realizations",
        {
            "realizations": [_realization_payload(r) for r in realizations],
            "meta": meta or {},
            "manifest": manifest,
        },
    )


def load_realizations(path) -> list:
    data = _read_json(path, "realizations")
    return [_realization_from(e, path) for e in data["realizations"]]


def save_scenarios(scen: ScenarioSet, path, manifest: str | None = None) -> None:
    _write_json(
        path,
        "scenario_set",
        {
            "scenarios": [_realization_payload(r) for r in scen.scenarios],
            "bands": [[b.lo, b.hi] for b in scen.bands],
            "districts": {label: sorted(members) for label, members in scen.districts.items()},
            "meta": scen.meta,
            "manifest": manifest,
        },
    )


def load_scenarios(path) -> ScenarioSet:
    data = _read_json(path, "scenario_set")
    try:
        return ScenarioSet(
            scenarios=tuple(_realization_from(e, path) for e in data["scenarios"]),
            bands=tuple(Band(float(lo), float(hi)) for lo, hi in data["bands"]),
            districts={
                str(label): frozenset(str(m) for m in members)
                for label, members in data["districts"].items()
            },
            meta=dict(data.get("meta", {})),
        )
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, InputError) as exc:
        raise FormatError(f"{path}: bad scenario set ({exc})") from exc


# -- route pools --------------------------------------------------------------

def _route_payload(route: Route) -> list:
    return list(route.visits[1:-1])


def save_pools(pools: dict, realizations: dict, path, manifest: str | None = None, cuts=()) -> None:
    """Snapshot resumable run state: route pools and the cut pool.

    ``realizations`` maps id -> DemandRealization so routes can be rebuilt.
    """
    payload = []
    for rid in sorted(pools):
        pool = pools[rid]
        payload.append(
            {
                "realization": _realization_payload(realizations[rid]),
                "routes": [
                    {"depot": r.depot, "stops": _route_payload(r)} for r in pool.routes()
                ],
            }
        )
    cut_payload = [
        {
            "scenario": c.scenario,
            "iteration": c.iteration,
            "pi_sum": c.pi_sum,
            "lam": dict(c.lam),
            "open_set": sorted(c.open_set),
            "eta_star": c.eta_star,
        }
        for c in cuts
    ]
    _write_json(path, "route_pools", {"pools": payload, "cuts": cut_payload, "manifest": manifest})


def load_pools(path, cfg: InstanceConfig, cg) -> tuple[dict, dict]:
    """Rebuild pools against a graph; returns (pools, realizations)."""
    data = _read_json(path, "route_pools")
    pools: dict = {}
    realizations: dict = {}
    for entry in data["pools"]:
        xi = _realization_from(entry["realization"], path)
        realizations[xi.id] = xi
        pool = RoutePool(xi.id)
        for r in entry["routes"]:
            try:
                pool.add(build_route(str(r["depot"]), [str(s) for s in r["stops"]], xi, cfg, cg))
            except InputError as exc:
                raise FormatError(f"{path}: bad route for {xi.id} ({exc})") from exc
        pools[xi.id] = pool
    return pools, realizations


def load_cuts(path) -> list:
    """Cut pool from a checkpoint; empty for snapshots without one."""
    from .planner import OptimalityCut

    data = _read_json(path, "route_pools")
    out = []
    for c in data.get("cuts", []):
        try:
            out.append(
                OptimalityCut(
                    scenario=str(c["scenario"]),
                    iteration=int(c["iteration"]),
                    pi_sum=float(c["pi_sum"]),
                    lam={str(k): float(v) for k, v in c["lam"].items()},
                    open_set=frozenset(str(k) for k in c["open_set"]),
                    eta_star=float(c["eta_star"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad cut entry ({exc})") from exc
    return out


# -- solutions and checkpoints ------------------------------------------------

def save_solution(result, cfg_path, cfg_hash, path, manifest: str | None = None) -> None:
    fs = result.first_stage
    _write_json(
        path,
        "solution",
        {
            "open": {k: bool(v) for k, v in fs.open.items()},
            "fleet": {k: int(v) for k, v in fs.fleet.items()},
            "covered": {k: bool(v) for k, v in fs.covered.items()},
            "objective": fs.objective_estimate,
            "lower_bound": result.state.lower_bound,
            "upper_bound": result.state.upper_bound,
            "gap": result.gap,
            "status": result.status,
            "iterations": result.state.iteration,
            "eta": result.state.eta,
            "bounds_trace": result.trace,
            "config_file": str(cfg_path),
            "config_hash": cfg_hash,
            "manifest": manifest,
        },
    )


def load_solution(path) -> dict:
    data = _read_json(path, "solution")
    try:
        data["first_stage"] = FirstStageSolution(
            open={str(k): bool(v) for k, v in data["open"].items()},
            fleet={str(k): int(v) for k, v in data["fleet"].items()},
            covered={str(k): bool(v) for k, v in data["covered"].items()},
            objective_estimate=data.get("objective"),
        )
    except (KeyError, TypeError, ValueError, InputError) as exc:
        raise FormatError(f"{path}: bad solution field ({exc})") from exc
    return data


# -- evaluation report ---------------------------------------------------------

def save_report(report, csv_path, summary_path, manifest: str | None = None) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["date", "routing_cost", "active_clients", "vehicles_used",
             "unserved_clients", "distance", "solve_time"]
        )
        for r in report.records:
            writer.writerow(
                [r.date, f"{r.routing_cost:.6f}", r.active_clients, r.vehicles_used,
                 r.unserved_clients, f"{r.distance:.6f}", f"{r.solve_time:.6f}"]
            )
    _write_json(
        summary_path,
        "evaluation_summary",
        {
            "mode": report.mode,
            "days": len(report.records),
            "cost_stats": report.cost_stats,
            "vehicle_utilization": report.vehicle_utilization,
            "service_level_days": report.service_level_days,
            "service_level_orders": report.service_level_orders,
            "daily_co2_tons": report.daily_co2_tons,
            "regression": report.regression,
            "records_file": str(csv_path),
            "manifest": manifest,
        },
    )


def save_routes(day, result, path, manifest: str | None = None) -> None:
    _write_json(
        path,
        "routes",
        {
            "realization": _realization_payload(day),
            "total_cost": result.value,
            "unserved": sorted(result.unserved),
            "routes": [
                {
                    "depot": r.depot,
                    "visits": list(r.visits),
                    "cost": r.cost,
                    "subtrip_loads": list(r.subtrip_loads),
                    "arrival_times": list(r.arrival_times),
                }
                for r in result.selected_routes
            ],
            "manifest": manifest,
        },
    )


def save_manifest(payload: dict, path) -> None:
    _write_json(path, "run_manifest", payload)


def load_manifest(path) -> dict:
    return _read_json(path, "run_manifest")
