import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fleetopt.graphs import build_complete_graph  # noqa: E402
from fleetopt.model import Arc, DemandRealization, InstanceConfig, Network, Node  # noqa: E402


@pytest.fixture(scope="session")
def line_fixture():
    """Four nodes on a line with unit legs: depot D then a, b, c.

    Direct arcs exist only between neighbours, so shortest paths compose
    hops: time D->a = 1, a->b = 1, b->c = 1; costs mirror times times ten.
    """
    ids = ["D", "a", "b", "c"]
    nodes = tuple(Node(i, float(p), 0.0) for p, i in enumerate(ids))
    arcs = []
    for u, v in zip(ids, ids[1:]):
        for tail, head in ((u, v), (v, u)):
            arcs.append(Arc(tail, head, 1.0, 1.0, 10.0))
    net = Network(nodes, tuple(arcs))
    cfg = InstanceConfig(
        candidate_depots=frozenset(["D"]),
        depot_daily_cost={"D": 100.0},
        vehicle_daily_cost=10.0,
        max_vehicles_per_depot=3,
        vehicle_capacity=10.0,
        time_windows={"D": (0.0, 50.0), "a": (0.0, 10.0), "b": (0.0, 10.0), "c": (0.0, 2.5)},
        coverage_radius=2.0,
        coverage_penalty={},
    )
    xi = DemandRealization("line-day", frozenset(["a", "b", "c"]), {"a": 2.0, "b": 3.0, "c": 4.0})
    return net, build_complete_graph(net), cfg, xi


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)
