"""Command line surface: fit, simulate, select-scenarios, solve, evaluate,
route-day.  Every run writes a manifest with input hashes, the seed in
play, and a per-phase timing breakdown, so any output can be reproduced.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 budget
exhausted with a partial result written.
"""

from __future__ import annotations

import argparse
import sys
import time as _time
from pathlib import Path

from . import __version__
from .demand import Band, fit_demand_model, make_districts, select_scenarios, simulate_days
from .evaluation import evaluate, write_charts
from .fileio import (
    FormatError,
    load_config,
    load_history,
    load_model,
    load_pools,
    load_realizations,
    load_scenarios,
    load_solution,
    save_manifest,
    save_model,
    save_pools,
    save_realizations,
    save_report,
    save_routes,
    save_scenarios,
    save_solution,
    sha256_file,
)
from .graphs import load_or_build
from .model import InputError
from .planner import Accel, PhaseTimer, RunBudgets, plan_fleet
from .routing import GraphBundle

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3


def _manifest_path(output: str) -> Path:
    return Path(str(output) + ".manifest.json")


class _Run:
    """Collects inputs, seed and timings for the run manifest."""

    def __init__(self, command: str, output: str, seed=None):
        self.command = command
        self.output = str(output)
        self.seed = seed
        self.inputs: dict = {}
        self.timer = PhaseTimer()
        self.started = _time.monotonic()

    def track(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    @property
    def manifest_name(self) -> str:
        return str(_manifest_path(self.output))

    def write(self) -> None:
        total = _time.monotonic() - self.started
        timings = dict(self.timer.totals)
        timings["other"] = max(0.0, total - sum(timings.values()))
        timings["total"] = total
        save_manifest(
            {
                "command": self.command,
                "output": self.output,
                "input_hashes": self.inputs,
                "seed": self.seed,
                "tool_version": __version__,
                "timings": timings,
            },
            self.manifest_name,
        )


def _load_instance(config_path, run: _Run, verbose=False):
    cfg, net, network_path = load_config(config_path)
    run.track(config_path)
    run.track(network_path)
    cache = Path(str(network_path) + ".spcache.npz")
    cg = load_or_build(net, Path(network_path).read_bytes(), cache)
    if verbose:
        print(f"loaded {len(net.nodes)} nodes, {len(net.arcs)} arcs from {network_path}")
    return cfg, net, GraphBundle(cg)


def _load_days(path):
    """Demand days from either a realizations JSON or a history CSV."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        history = load_history(path)
        out = []
        for date, orders in history.days:
            active = {n: v for n, v in orders.items() if v > 0}
            if active:
                from .model import DemandRealization

                out.append(DemandRealization(date, frozenset(active), active))
        return out
    return load_realizations(path)


def _parse_bands(text: str):
    bands = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            lo, hi = part.split("-")
            bands.append(Band(float(lo), float(hi)))
        except (ValueError, InputError) as exc:
            raise InputError(f"bad band {part!r}; expected LO-HI percentiles") from exc
    if not bands:
        raise InputError("no bands given")
    return bands


def cmd_fit(args) -> int:
    run = _Run("fit", args.output)
    history = load_history(args.history)
    run.track(args.history)
    with run.timer.span("training"):
        model = fit_demand_model(history, order_model=args.order_model)
    save_model(model, args.output, manifest=run.manifest_name)
    run.write()
    print(f"fitted demand model over {history.num_days} days -> {args.output}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    run = _Run("simulate", args.output, seed=args.seed)
    model = load_model(args.model)
    run.track(args.model)
    days = simulate_days(model, args.days, args.month, args.seed)
    save_realizations(
        days,
        args.output,
        meta={"seed": args.seed, "month": args.month, "days": args.days},
        manifest=run.manifest_name,
    )
    run.write()
    print(f"simulated {len(days)} days -> {args.output}")
    return EXIT_OK


def cmd_select_scenarios(args) -> int:
    run = _Run("select-scenarios", args.output)
    sample = load_realizations(args.sample)
    run.track(args.sample)
    if args.districts_file:
        import json

        districts = {
            str(k): frozenset(str(m) for m in v)
            for k, v in json.loads(Path(args.districts_file).read_text()).items()
        }
        run.track(args.districts_file)
    else:
        from .fileio import load_network

        net = load_network(args.network)
        run.track(args.network)
        districts = make_districts(net, args.districts)
    scen = select_scenarios(
        sample,
        _parse_bands(args.bands),
        districts,
        probability_mode=args.probabilities,
        method=args.method,
    )
    scen.meta.update({"sample_file": str(args.sample), "bands": args.bands})
    save_scenarios(scen, args.output, manifest=run.manifest_name)
    run.write()
    print(f"selected {len(scen.scenarios)} scenarios -> {args.output}")
    return EXIT_OK


def cmd_solve(args) -> int:
    run = _Run("solve", args.output, seed=None)
    cfg, net, graphs = _load_instance(args.config, run, verbose=args.verbose)
    scen = load_scenarios(args.scenarios)
    run.track(args.scenarios)
    if args.depots is not None:
        from dataclasses import replace

        cfg = replace(cfg, num_depots_to_open=args.depots)
        if args.verbose:
            print(f"flag override: num_depots_to_open={args.depots}")
    from .planner import warm_start_pools

    accel = Accel(
        pooling=not args.no_pooling,
        activation=not args.no_activation,
        recycling=not args.no_recycling,
    )
    budgets = RunBudgets(
        max_iterations=args.max_iterations,
        time_limit=args.time_limit,
        pricing_time_budget=args.pricing_time_limit,
    )
    cuts = None
    if args.resume:
        from .fileio import load_cuts

        pools, _ = load_pools(args.resume, cfg, graphs.cg)
        cuts = load_cuts(args.resume)
        run.track(args.resume)
        missing = [s.id for s in scen.scenarios if s.id not in pools]
        if missing:
            raise InputError(f"checkpoint lacks pools for scenarios {missing}")
        if args.verbose:
            print(f"resumed {sum(len(p) for p in pools.values())} routes, {len(cuts)} cuts")
    else:
        pools = warm_start_pools(cfg, scen.scenarios, graphs, timer=run.timer)
    result = plan_fleet(
        cfg,
        scen.scenarios,
        graphs,
        eps=args.eps,
        budgets=budgets,
        accel=accel,
        threads=args.threads,
        timer=run.timer,
        pools=pools,
        cuts=cuts,
    )
    save_solution(result, args.config, sha256_file(args.config), args.output, manifest=run.manifest_name)
    checkpoint = Path(str(args.output) + ".checkpoint.json")
    save_pools(
        pools,
        {s.id: s for s in scen.scenarios},
        checkpoint,
        manifest=run.manifest_name,
        cuts=result.state.cuts,
    )
    run.write()
    fs = result.first_stage
    opened = [k for k, v in fs.open.items() if v]
    print(
        f"status={result.status} objective={fs.objective_estimate:.2f} gap={result.gap:.2e} "
        f"depots={sorted(opened)} fleet={fs.total_fleet()} -> {args.output}"
    )
    if result.status != "optimal":
        return EXIT_BUDGET
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run = _Run("evaluate", args.output)
    solution = load_solution(args.solution)
    run.track(args.solution)
    cfg, net, graphs = _load_instance(args.config or solution["config_file"], run, args.verbose)
    days = _load_days(args.days)
    run.track(args.days)
    mode = {"petal": "petal_heuristic"}.get(args.mode, args.mode)
    seed_pools = None
    pool_path = args.seed_pools or (
        str(args.solution) + ".checkpoint.json"
        if Path(str(args.solution) + ".checkpoint.json").exists()
        else None
    )
    if pool_path:
        seed_pools, _ = load_pools(pool_path, cfg, graphs.cg)
        run.track(pool_path)
    with run.timer.span("set_covering"):
        report = evaluate(
            solution["first_stage"],
            days,
            cfg,
            graphs,
            mode=mode,
            seed_pools=seed_pools,
            recycle_across_days=not args.no_recycling,
            threads=args.threads,
            pricing_time_budget=args.pricing_time_limit,
        )
    summary = Path(str(args.output) + ".summary.json")
    save_report(report, args.output, summary, manifest=run.manifest_name)
    if args.charts:
        write_charts(report, args.charts)
    run.write()
    print(
        f"evaluated {len(report.records)} days mode={mode} "
        f"mean_cost={report.cost_stats['mean']:.2f} service_days={report.service_level_days:.4f} "
        f"-> {args.output}"
    )
    return EXIT_OK


def cmd_route_day(args) -> int:
    run = _Run("route-day", args.output)
    solution = load_solution(args.solution)
    run.track(args.solution)
    cfg, net, graphs = _load_instance(args.config or solution["config_file"], run, args.verbose)
    days = _load_days(args.day)
    run.track(args.day)
    if args.date is not None:
        days = [d for d in days if d.id == args.date]
        if not days:
            raise InputError(f"no day with id {args.date!r} in {args.day}")
        day = days[0]
    else:
        if not (0 <= args.index < len(days)):
            raise InputError(f"--index {args.index} out of range; file has {len(days)} days")
        day = days[args.index]
    from .routing import solve_mdvrp
    from .planner import warm_start_pools

    pools = warm_start_pools(cfg, [day.with_probability(1.0)], graphs, timer=run.timer)
    with run.timer.span("set_covering"):
        result = solve_mdvrp(solution["first_stage"], day, pools[day.id], cfg, graphs)
    save_routes(day, result, args.output, manifest=run.manifest_name)
    run.write()
    print(
        f"routed {day.id}: cost={result.value:.2f} vehicles={len(result.selected_routes)} "
        f"unserved={len(result.unserved)} -> {args.output}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fleetopt",
        description="Depot siting, fleet sizing and daily routing under stochastic demand",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the demand model from a history CSV")
    p.add_argument("history")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--order-model", default="zero_truncated_poisson",
                   choices=["zero_truncated_poisson", "poisson"])
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="simulate demand days from a fitted model")
    p.add_argument("model")
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--month", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("select-scenarios", help="pick worst-case days per demand band")
    p.add_argument("sample")
    p.add_argument("--bands", required=True, help="comma list of LO-HI percentile bands")
    p.add_argument("--districts", type=int, default=9, help="number of spatial cells")
    p.add_argument("--network", help="network file for building districts")
    p.add_argument("--districts-file", help="explicit district partition JSON")
    p.add_argument("--probabilities", default="width", choices=["width", "uniform"])
    p.add_argument("--method", default="argmax", choices=["argmax", "mip"])
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_select_scenarios)

    p = sub.add_parser("solve", help="choose depots and fleet against scenarios")
    p.add_argument("config")
    p.add_argument("scenarios")
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--depots", type=int, default=None, help="fix the number of open depots")
    p.add_argument("--max-iterations", type=int, default=60)
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--pricing-time-limit", type=float, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-pooling", action="store_true")
    p.add_argument("--no-activation", action="store_true")
    p.add_argument("--no-recycling", action="store_true")
    p.add_argument("--resume", default=None, help="checkpoint file from a previous solve")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="route every demand day under a fixed solution")
    p.add_argument("solution")
    p.add_argument("days", help="realizations JSON or history CSV")
    p.add_argument("--mode", default="full_cg",
                   choices=["full_cg", "single_iteration", "petal_heuristic", "petal"])
    p.add_argument("--config", default=None, help="override the config recorded in the solution")
    p.add_argument("--seed-pools", default=None, help="route pool snapshot for seeding")
    p.add_argument("--no-recycling", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--pricing-time-limit", type=float, default=None)
    p.add_argument("--charts", default=None, help="directory for optional chart files")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("route-day", help="solve one day and write its routes")
    p.add_argument("solution")
    p.add_argument("day", help="realizations JSON or history CSV")
    p.add_argument("--date", default=None, help="pick the day with this id")
    p.add_argument("--index", type=int, default=0, help="pick the day by position")
    p.add_argument("--config", default=None)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_route_day)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (InputError, FormatError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
