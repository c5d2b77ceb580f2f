"""Self-contained linear and mixed-integer programming kernel.

A dense two-phase revised simplex with bounded variables supplies primal
solutions and row duals; a best-bound branch-and-bound with depth-first
dives handles integrality.  Largest-reduced-cost pricing switches to
Bland's rule after a run of degenerate pivots.

Tolerances are centralized here: feasibility 1e-7, optimality 1e-6,
integrality 1e-6.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .model import InputError

FEAS_TOL = 1e-7
OPT_TOL = 1e-6
INT_TOL = 1e-6

_BLAND_AFTER = 1000
_PIVOT_EPS = 1e-10

LE, GE, EQ = "<=", ">=", "="

# nonbasic statuses
_BASIC, _AT_LOWER, _AT_UPPER, _FREE = 0, 1, 2, 3


def _try_factor(mat):
    """LU factorization, or None when the basis is numerically singular."""
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            lu = lu_factor(mat, check_finite=False)
        except (ValueError, np.linalg.LinAlgError):
            return None
    diag = np.abs(np.diag(lu[0]))
    if diag.size and diag.min() < 1e-11:
        return None
    return lu


@dataclass
class Variable:
    name: str
    lb: float = 0.0
    ub: float = math.inf
    obj: float = 0.0
    is_integer: bool = False


@dataclass
class Constraint:
    name: str
    coeffs: dict  # var index -> coefficient
    sense: str
    rhs: float


class LinearModel:
    """Variables, linear constraints and a min/max objective."""

    def __init__(self, sense: str = "min"):
        if sense not in ("min", "max"):
            raise InputError("sense must be 'min' or 'max'")
        self.sense = sense
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective_offset = 0.0
        self._var_index: dict[str, int] = {}

    def add_variable(self, name, lb=0.0, ub=math.inf, obj=0.0, integer=False) -> int:
        if name in self._var_index:
            raise InputError(f"duplicate variable {name!r}")
        for value in (lb, ub, obj):
            if math.isnan(value):
                raise InputError(f"NaN in variable {name!r}")
        if not math.isfinite(obj):
            raise InputError(f"objective coefficient of {name!r} must be finite")
        if lb > ub:
            raise InputError(f"empty bound interval on {name!r}")
        self.variables.append(Variable(name, lb, ub, obj, integer))
        self._var_index[name] = len(self.variables) - 1
        return self._var_index[name]

    def add_constraint(self, name, coeffs, sense, rhs) -> int:
        if sense not in (LE, GE, EQ):
            raise InputError(f"unknown sense {sense!r}")
        if not math.isfinite(rhs):
            raise InputError(f"rhs of {name!r} must be finite")
        indexed = {}
        for var_name, coef in coeffs.items():
            if var_name not in self._var_index:
                raise InputError(f"constraint {name!r} references unknown variable {var_name!r}")
            if not math.isfinite(coef):
                raise InputError(f"non-finite coefficient in {name!r}")
            if coef != 0.0:
                indexed[self._var_index[var_name]] = indexed.get(self._var_index[var_name], 0.0) + coef
        self.constraints.append(Constraint(name, indexed, sense, rhs))
        return len(self.constraints) - 1

    def variable_index(self, name: str) -> int:
        return self._var_index[name]


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | unbounded | iteration_limit
    objective: float | None = None
    values: dict = field(default_factory=dict)
    duals: dict = field(default_factory=dict)
    iterations: int = 0
    nodes: int = 0
    best_bound: float | None = None
    gap: float | None = None


class _StandardForm:
    """Equality-form arrays: structural columns, slacks, bounds, row map."""

    def __init__(self, model: LinearModel):
        self.model = model
        nv = len(model.variables)
        sign = 1.0 if model.sense == "min" else -1.0

        # substitute fixed variables, drop empty rows
        self.fixed = {}
        for j, v in enumerate(model.variables):
            if v.ub - v.lb <= 0.0:
                self.fixed[j] = v.lb
        self.live_vars = [j for j in range(nv) if j not in self.fixed]
        self.offset = model.objective_offset + sum(
            model.variables[j].obj * val for j, val in self.fixed.items()
        )

        rows = []
        self.row_scale = []
        self.row_of_constraint = {}  # constraint position -> standard row or None
        self.infeasible_empty = None
        for ci, con in enumerate(model.constraints):
            rhs = con.rhs - sum(con.coeffs.get(j, 0.0) * val for j, val in self.fixed.items())
            live = {j: c for j, c in con.coeffs.items() if j not in self.fixed}
            if not live:
                ok = (
                    (con.sense == LE and 0.0 <= rhs + FEAS_TOL)
                    or (con.sense == GE and 0.0 >= rhs - FEAS_TOL)
                    or (con.sense == EQ and abs(rhs) <= FEAS_TOL)
                )
                if not ok:
                    self.infeasible_empty = con.name
                self.row_of_constraint[ci] = None
                continue
            # equilibrate: wide coefficient ranges across rows wreck the
            # pivoting tolerances, so each row is normalized to unit scale
            scale = max(abs(c) for c in live.values())
            if scale <= 0 or 0.5 <= scale <= 2.0:
                scale = 1.0
            live = {j: c / scale for j, c in live.items()}
            rhs = rhs / scale
            self.row_of_constraint[ci] = len(rows)
            self.row_scale.append(scale)
            rows.append((live, con.sense, rhs))

        m = len(rows)
        self.col_of_var = {j: p for p, j in enumerate(self.live_vars)}
        n_struct = len(self.live_vars)
        ncols = n_struct + m
        A = np.zeros((m, ncols))
        lb = np.empty(ncols)
        ub = np.empty(ncols)
        c = np.zeros(ncols)
        for p, j in enumerate(self.live_vars):
            v = model.variables[j]
            lb[p], ub[p] = v.lb, v.ub
            c[p] = sign * v.obj
        for i, (live, sense, rhs) in enumerate(rows):
            for j, coef in live.items():
                A[i, self.col_of_var[j]] = coef
            s = n_struct + i
            A[i, s] = 1.0
            if sense == LE:
                lb[s], ub[s] = 0.0, math.inf
            elif sense == GE:
                lb[s], ub[s] = -math.inf, 0.0
            else:
                lb[s], ub[s] = 0.0, 0.0
        self.A, self.lb, self.ub, self.c = A, lb, ub, c
        self.b = np.array([rhs for _, _, rhs in rows])
        self.m, self.n_struct, self.ncols = m, n_struct, ncols
        self.sign = sign

    def result_from(self, raw: "_RawResult") -> SolveResult:
        model = self.model
        if raw.status != "optimal":
            return SolveResult(status=raw.status, iterations=raw.iterations)
        values = {}
        for j, v in enumerate(model.variables):
            if j in self.fixed:
                values[v.name] = self.fixed[j]
            else:
                values[v.name] = float(raw.x[self.col_of_var[j]])
        duals = {}
        for ci, con in enumerate(model.constraints):
            row = self.row_of_constraint[ci]
            if row is None:
                duals[con.name] = 0.0
            else:
                duals[con.name] = self.sign * float(raw.y[row]) / self.row_scale[row]
        obj = self.sign * raw.objective + self.offset
        return SolveResult(
            status="optimal",
            objective=obj,
            values=values,
            duals=duals,
            iterations=raw.iterations,
        )


@dataclass
class _RawResult:
    status: str
    objective: float = 0.0
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    iterations: int = 0


def _solve_standard(sf: _StandardForm, lb, ub, iteration_limit) -> _RawResult:
    """Two-phase bounded simplex over prepared arrays (bounds may be overridden)."""
    A, b = sf.A, sf.b
    m, ncols = sf.m, sf.ncols
    if np.any(lb > ub + FEAS_TOL):
        return _RawResult("infeasible")
    if m == 0:
        x = np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))
        # unconstrained: push each variable to its best bound
        obj = 0.0
        for j in range(ncols):
            cj = sf.c[j]
            if cj > 0:
                if not math.isfinite(lb[j]):
                    return _RawResult("unbounded")
                x[j] = lb[j]
            elif cj < 0:
                if not math.isfinite(ub[j]):
                    return _RawResult("unbounded")
                x[j] = ub[j]
            obj += cj * x[j]
        return _RawResult("optimal", obj, x, np.zeros(0))

    nall = ncols + m
    Aall = np.hstack([A, np.zeros((m, m))])
    lball = np.concatenate([lb, np.zeros(m)])
    uball = np.concatenate([ub, np.zeros(m)])

    status = np.empty(nall, dtype=np.int8)
    x = np.zeros(nall)
    for j in range(ncols):
        if math.isfinite(lball[j]):
            status[j], x[j] = _AT_LOWER, lball[j]
        elif math.isfinite(uball[j]):
            status[j], x[j] = _AT_UPPER, uball[j]
        else:
            status[j], x[j] = _FREE, 0.0

    resid = b - A @ x[:ncols]
    basis = np.arange(ncols, ncols + m)
    for i in range(m):
        Aall[i, ncols + i] = 1.0 if resid[i] >= 0 else -1.0
        uball[ncols + i] = math.inf
        x[ncols + i] = abs(resid[i])
        status[ncols + i] = _BASIC

    phase1_cost = np.zeros(nall)
    phase1_cost[ncols:] = 1.0
    phase2_cost = np.concatenate([sf.c, np.zeros(m)])

    iterations = 0

    def run_phase(cost, phase):
        nonlocal iterations
        degenerate_run = 0
        while True:
            if iterations >= iteration_limit:
                return "iteration_limit"
            B = Aall[:, basis]
            nonbasic = status != _BASIC
            rhs = b - Aall[:, nonbasic] @ x[nonbasic]
            lu = _try_factor(B)
            if lu is not None:
                xb = lu_solve(lu, rhs)
                y = lu_solve(lu, cost[basis], trans=1)
            else:
                xb = np.linalg.lstsq(B, rhs, rcond=None)[0]
                y = np.linalg.lstsq(B.T, cost[basis], rcond=None)[0]
            x[basis] = xb
            d = cost - Aall.T @ y

            eligible = np.zeros(nall, dtype=bool)
            eligible |= (status == _AT_LOWER) & (d < -OPT_TOL)
            eligible |= (status == _AT_UPPER) & (d > OPT_TOL)
            eligible |= (status == _FREE) & (np.abs(d) > OPT_TOL)
            eligible &= (uball - lball) > _PIVOT_EPS  # fixed-range columns cannot move
            if phase == 1:
                eligible[ncols:] = False  # artificials never re-enter
            idx = np.flatnonzero(eligible)
            if idx.size == 0:
                return "optimal"
            bland = degenerate_run >= _BLAND_AFTER
            if bland:
                e = int(idx[0])
            else:
                e = int(idx[np.argmax(np.abs(d[idx]))])
            sigma = 1.0 if (status[e] == _AT_LOWER or (status[e] == _FREE and d[e] < 0)) else -1.0

            if lu is not None:
                w = lu_solve(lu, Aall[:, e])
            else:
                w = np.linalg.lstsq(B, Aall[:, e], rcond=None)[0]

            # ratio test over basic variables plus the entering bound flip
            best_t = math.inf
            leave_pos = -1
            leave_to = _AT_LOWER
            for i in range(m):
                k = basis[i]
                delta = sigma * w[i]
                if delta > _PIVOT_EPS and math.isfinite(lball[k]):
                    t = (x[k] - lball[k]) / delta
                    to = _AT_LOWER
                elif delta < -_PIVOT_EPS and math.isfinite(uball[k]):
                    t = (uball[k] - x[k]) / (-delta)
                    to = _AT_UPPER
                else:
                    continue
                if leave_pos < 0 or t < best_t - _PIVOT_EPS:
                    take = True
                elif t < best_t + _PIVOT_EPS:
                    if bland:
                        take = basis[i] < basis[leave_pos]
                    else:
                        take = abs(w[i]) > abs(w[leave_pos]) + _PIVOT_EPS or (
                            abs(abs(w[i]) - abs(w[leave_pos])) <= _PIVOT_EPS
                            and basis[i] < basis[leave_pos]
                        )
                else:
                    take = False
                if take:
                    best_t, leave_pos, leave_to = max(t, 0.0), i, to
            t_flip = uball[e] - lball[e] if math.isfinite(uball[e]) and math.isfinite(lball[e]) else math.inf

            iterations += 1
            if best_t == math.inf and t_flip == math.inf:
                return "unbounded"
            if t_flip < best_t - _PIVOT_EPS:
                x[e] = uball[e] if status[e] == _AT_LOWER else lball[e]
                status[e] = _AT_UPPER if status[e] == _AT_LOWER else _AT_LOWER
                degenerate_run = 0
                continue
            t = best_t
            degenerate_run = degenerate_run + 1 if t <= _PIVOT_EPS else 0
            k_out = basis[leave_pos]
            if status[e] == _FREE:
                start = 0.0
            elif status[e] == _AT_UPPER:
                start = uball[e]
            else:
                start = lball[e]
            x[e] = start + sigma * t
            x[basis] -= sigma * t * w
            x[k_out] = lball[k_out] if leave_to == _AT_LOWER else uball[k_out]
            status[k_out] = leave_to
            status[e] = _BASIC
            basis[leave_pos] = e

    outcome = run_phase(phase1_cost, 1)
    if outcome == "iteration_limit":
        return _RawResult("iteration_limit", iterations=iterations)
    infeas = float(x[ncols:].sum())
    if outcome != "optimal" or infeas > 1e-6:
        return _RawResult("infeasible", iterations=iterations)
    uball[ncols:] = 0.0  # pin artificials for phase 2

    outcome = run_phase(phase2_cost, 2)
    if outcome == "iteration_limit":
        return _RawResult("iteration_limit", iterations=iterations)
    if outcome == "unbounded":
        return _RawResult("unbounded", iterations=iterations)
    B = Aall[:, basis]
    try:
        y = np.linalg.solve(B.T, phase2_cost[basis])
    except np.linalg.LinAlgError:
        y = np.linalg.lstsq(B.T, phase2_cost[basis], rcond=None)[0]
    obj = float(phase2_cost[:ncols] @ x[:ncols])
    return _RawResult("optimal", obj, x[:ncols].copy(), y, iterations)


def solve_lp(model: LinearModel, iteration_limit: int = 100000) -> SolveResult:
    """Solve the continuous relaxation; integrality flags are ignored.

    Optimal results carry one dual value per constraint under the usual
    convention for the model's sense (for minimization: >= rows price
    nonnegative, <= rows nonpositive).
    """
    sf = _StandardForm(model)
    if sf.infeasible_empty is not None:
        return SolveResult(status="infeasible")
    raw = _solve_standard(sf, sf.lb, sf.ub, iteration_limit)
    return sf.result_from(raw)


def _is_integral(value: float) -> bool:
    return abs(value - round(value)) <= INT_TOL


def solve_mip(
    model: LinearModel,
    gap_tol: float = 1e-9,
    node_limit: int = 200000,
    iteration_limit: int = 100000,
) -> SolveResult:
    """Branch and bound over the simplex relaxation.

    Branches on the most fractional integer variable, explores by best
    bound, and dives depth-first until a first incumbent exists.  Stops
    when the relative gap falls below ``gap_tol`` or ``node_limit`` is hit
    (the incumbent found so far is then reported with the proven bound).
    """
    sf = _StandardForm(model)
    if sf.infeasible_empty is not None:
        return SolveResult(status="infeasible")
    sign = sf.sign
    int_cols = [
        sf.col_of_var[j]
        for j, v in enumerate(model.variables)
        if v.is_integer and j not in sf.fixed
    ]

    def lp_with(lb, ub):
        return _solve_standard(sf, lb, ub, iteration_limit)

    root = lp_with(sf.lb, sf.ub)
    nodes = 1
    total_iters = root.iterations
    if root.status in ("infeasible", "unbounded", "iteration_limit"):
        return SolveResult(status=root.status, nodes=nodes, iterations=total_iters)

    incumbent = None  # (objective in min sense, x)
    counter = 0
    heap = []  # (bound, counter, lb, ub)
    dive = []

    def fractional(x):
        worst, pick = INT_TOL, -1
        for c in int_cols:
            f = abs(x[c] - round(x[c]))
            if f > worst + 1e-12:
                worst, pick = f, c
        return pick

    def push(bound, lb, ub, prefer_dive):
        nonlocal counter
        counter += 1
        if prefer_dive:
            dive.append((bound, counter, lb, ub))
        else:
            heapq.heappush(heap, (bound, counter, lb, ub))

    def consider(raw, lb, ub, parent_bound):
        """Process a solved node: prune, record incumbent, or branch."""
        nonlocal incumbent
        bound = max(raw.objective, parent_bound)
        if incumbent is not None and bound >= incumbent[0] - 1e-9:
            return
        pick = fractional(raw.x)
        if pick < 0:
            if incumbent is None or raw.objective < incumbent[0] - 1e-12:
                incumbent = (raw.objective, raw.x.copy())
            return
        f = raw.x[pick]
        lo_ub, hi_lb = math.floor(f + INT_TOL), math.ceil(f - INT_TOL)
        down_lb, down_ub = lb.copy(), ub.copy()
        down_ub[pick] = min(down_ub[pick], lo_ub)
        up_lb, up_ub = lb.copy(), ub.copy()
        up_lb[pick] = max(up_lb[pick], hi_lb)
        no_inc = incumbent is None
        # dive toward the nearest integer first while no incumbent exists
        first_down = (f - lo_ub) <= (hi_lb - f)
        first = (down_lb, down_ub) if first_down else (up_lb, up_ub)
        second = (up_lb, up_ub) if first_down else (down_lb, down_ub)
        push(bound, second[0], second[1], False)
        push(bound, first[0], first[1], no_inc)

    consider(root, sf.lb, sf.ub, -math.inf)

    best_bound = root.objective
    while (heap or dive) and nodes < node_limit:
        open_bounds = [h[0] for h in heap[:1]] + [d[0] for d in dive]
        if incumbent is not None:
            best_bound = min(open_bounds) if open_bounds else incumbent[0]
            denom = max(abs(incumbent[0]), 1.0)
            if (incumbent[0] - best_bound) / denom <= gap_tol:
                break
        entry = dive.pop() if dive else heapq.heappop(heap)
        bound, _, lb, ub = entry
        if incumbent is not None and bound >= incumbent[0] - 1e-9:
            continue
        raw = lp_with(lb, ub)
        nodes += 1
        total_iters += raw.iterations
        if raw.status == "infeasible":
            continue
        if raw.status in ("unbounded", "iteration_limit"):
            return SolveResult(status=raw.status, nodes=nodes, iterations=total_iters)
        consider(raw, lb, ub, bound)

    open_bounds = [h[0] for h in heap] + [d[0] for d in dive]
    if incumbent is None:
        if nodes >= node_limit:
            return SolveResult(status="iteration_limit", nodes=nodes, iterations=total_iters)
        return SolveResult(status="infeasible", nodes=nodes, iterations=total_iters)
    best_bound = min(open_bounds) if open_bounds else incumbent[0]
    best_bound = min(best_bound, incumbent[0])
    denom = max(abs(incumbent[0]), 1.0)
    gap = (incumbent[0] - best_bound) / denom
    hit_limit = nodes >= node_limit and gap > gap_tol

    values = {}
    x = incumbent[1]
    for j, v in enumerate(model.variables):
        if j in sf.fixed:
            val = sf.fixed[j]
        else:
            val = float(x[sf.col_of_var[j]])
        if v.is_integer and _is_integral(val):
            val = float(round(val))
        values[v.name] = val
    return SolveResult(
        status="iteration_limit" if hit_limit else "optimal",
        objective=sign * incumbent[0] + sf.offset,
        values=values,
        duals={},
        nodes=nodes,
        iterations=total_iters,
        best_bound=sign * best_bound + sf.offset,
        gap=gap,
    )


def write_lp_text(model: LinearModel, path) -> None:
    """Dump the model in a plain LP text format for debugging."""
    lines = [f"\\ fleetopt model dump", "Minimize" if model.sense == "min" else "Maximize"]
    terms = [f"{v.obj:+g} {v.name}" for v in model.variables if v.obj]
    lines.append(" obj: " + (" ".join(terms) if terms else "0"))
    lines.append("Subject To")
    for con in model.constraints:
        body = " ".join(
            f"{coef:+g} {model.variables[j].name}" for j, coef in sorted(con.coeffs.items())
        )
        lines.append(f" {con.name}: {body} {con.sense} {con.rhs:g}")
    lines.append("Bounds")
    for v in model.variables:
        lines.append(f" {v.lb:g} <= {v.name} <= {v.ub:g}")
    ints = [v.name for v in model.variables if v.is_integer]
    if ints:
        lines.append("General")
        lines.append(" " + " ".join(ints))
    lines.append("End")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
