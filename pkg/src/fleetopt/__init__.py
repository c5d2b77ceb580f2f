"""Depot siting, fleet sizing and daily routing under stochastic demand."""

__version__ = "0.1.0"

from .model import (
    Arc,
    DemandRealization,
    FeasibilityCheck,
    FirstStageSolution,
    InactiveNodeError,
    InputError,
    InstanceConfig,
    Network,
    Node,
    Route,
    UnknownNodeError,
    build_route,
    first_stage_cost,
    route_cost,
    route_distance,
    route_feasible,
)
from .graphs import (
    AuxiliaryGraph,
    CompleteGraph,
    all_pairs_shortest,
    build_auxiliary,
    build_complete_graph,
    load_or_build,
    reload_copies_needed,
)
from .milp import LinearModel, SolveResult, solve_lp, solve_mip
from .pricing import BoundTable, DualPrices, PricingResult, compute_bounds, price_route
from .routing import GraphBundle, RoutePool, SubproblemResult, solve_mdvrp, solve_rrmp
from .recycling import ReplacementCost, recycle_route
from .planner import (
    Accel,
    MasterState,
    OptimalityCut,
    PlanResult,
    RunBudgets,
    build_master,
    plan_fleet,
    warm_start_pools,
)
from .demand import (
    Band,
    DemandHistory,
    FittedDemandModel,
    ScenarioSet,
    fit_demand_model,
    make_districts,
    select_scenarios,
    simulate_days,
)
from .evaluation import (
    EvaluationReport,
    describe,
    evaluate,
    regress_cost_on_clients,
    welch_test,
)
