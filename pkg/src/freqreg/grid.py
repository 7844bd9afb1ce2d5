"""Unit commitment with regulation reserves and output-dependent emission rates.

Each hour is solved independently.  Reserves carry no price, so a commitment
set is feasible for an hour exactly when

    sum(p_min) + RD <= demand <= sum(p_max) - RU

where RU/RD are the reserve requirements left after the data center's
regulation provision.  Within a feasible set the cheapest dispatch is merit
order on marginal cost, and every set is enumerated, so the result is exact
for small fleets.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InfeasibleError, ParameterError

MAX_ENUM_GENERATORS = 12
_TOL = 1e-9


@dataclass(frozen=True)
class Generator:
    name: str
    p_min: float
    p_max: float
    cost_c0: float = 0.0
    cost_c1: float = 0.0
    e_peak: float = 0.0
    eta: float = 0.25

    def __post_init__(self):
        if not 0 < self.p_min <= self.p_max:
            raise ParameterError(f"{self.name}: need 0 < p_min <= p_max")
        if self.e_peak < 0 or self.eta < 0:
            raise ParameterError(f"{self.name}: e_peak and eta must be non-negative")
        if self.cost_c0 < 0 or self.cost_c1 < 0:
            raise ParameterError(f"{self.name}: costs must be non-negative")


@dataclass(frozen=True)
class UcProblem:
    generators: tuple
    demand: tuple
    reserve_up_req: float = 0.0
    reserve_down_req: float = 0.0
    dc_regulation: float = 0.0
    reference_signal: object = None

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "demand", tuple(float(d) for d in np.atleast_1d(self.demand)))
        if not self.generators:
            raise ParameterError("fleet is empty")
        if any(d < 0 for d in self.demand):
            raise ParameterError("demand must be non-negative")
        if self.reserve_up_req < 0 or self.reserve_down_req < 0 or self.dc_regulation < 0:
            raise ParameterError("reserve requirements and dc_regulation must be non-negative")

    @property
    def residual_up(self) -> float:
        return max(0.0, self.reserve_up_req - self.dc_regulation)

    @property
    def residual_down(self) -> float:
        return max(0.0, self.reserve_down_req - self.dc_regulation)

    def signal_samples(self) -> np.ndarray:
        sig = self.reference_signal
        if sig is None:
            return np.zeros(1)
        return np.asarray(getattr(sig, "samples", sig), dtype=float)


@dataclass(frozen=True)
class HourSolution:
    hour: int
    committed: tuple
    p: tuple
    ru: tuple
    rd: tuple
    cost: float

    @property
    def n_committed(self) -> int:
        return sum(self.committed)


@dataclass(frozen=True)
class UcSolution:
    hours: tuple
    cost: float
    c_generation: float
    c_reserve: float
    plant_hours: int

    @property
    def total_emissions(self) -> float:
        return self.c_generation + self.c_reserve


def emission_rate(g: Generator, p: float) -> float:
    """Emission rate in tCO2/MWh at output ``p``; highest at low load."""
    if not g.p_min - _TOL <= p <= g.p_max + _TOL:
        raise ParameterError(f"{g.name}: output {p:g} MW outside [{g.p_min:g}, {g.p_max:g}]")
    return g.e_peak * (1.0 + g.eta * (1.0 - p / g.p_max))


def _emissions(g: Generator, p: float) -> float:
    return p * emission_rate(g, p)


def _emission_curve(g: Generator, x):
    return x * g.e_peak * (1.0 + g.eta * (1.0 - x / g.p_max))


def merit_dispatch(gens, demand: float) -> list:
    """Cheapest dispatch of ``gens`` (all committed) meeting ``demand``.

    Everyone starts at p_min; the remainder fills generators in order of
    marginal cost.  Generators with equal marginal cost share their block in
    proportion to their adjustable range.
    """
    p = [g.p_min for g in gens]
    rest = demand - sum(p)
    order = sorted(range(len(gens)), key=lambda i: gens[i].cost_c1)
    for _, block in itertools.groupby(order, key=lambda i: gens[i].cost_c1):
        block = list(block)
        room = sum(gens[i].p_max - gens[i].p_min for i in block)
        if rest <= 0 or room <= 0:
            continue
        take = min(rest, room)
        for i in block:
            p[i] += take * (gens[i].p_max - gens[i].p_min) / room
        rest -= take
    return p


def _split(total, caps):
    room = sum(caps)
    if total <= 0 or room <= 0:
        return [0.0] * len(caps)
    return [total * c / room for c in caps]


def _solve_hour(problem: UcProblem, hour: int) -> HourSolution:
    gens = problem.generators
    demand = problem.demand[hour]
    ru_req, rd_req = problem.residual_up, problem.residual_down
    best = None
    for k in range(1, len(gens) + 1):
        for subset in itertools.combinations(range(len(gens)), k):
            sel = [gens[i] for i in subset]
            lo = sum(g.p_min for g in sel) + rd_req
            hi = sum(g.p_max for g in sel) - ru_req
            if not lo - _TOL <= demand <= hi + _TOL:
                continue
            p = merit_dispatch(sel, demand)
            cost = sum(g.cost_c0 + g.cost_c1 * x for g, x in zip(sel, p))
            key = (cost, k, subset)
            if best is None or _better(key, best[0]):
                best = (key, subset, p)
    if best is None:
        raise InfeasibleError(f"hour {hour}: {_binding(problem, hour)}", hour=hour,
                              constraint=_binding(problem, hour))
    _, subset, p_sel = best
    committed = [False] * len(gens)
    p = [0.0] * len(gens)
    for i, x in zip(subset, p_sel):
        committed[i] = True
        p[i] = x
    ru_sel = _split(ru_req, [gens[i].p_max - p[i] for i in subset])
    rd_sel = _split(rd_req, [p[i] - gens[i].p_min for i in subset])
    ru = [0.0] * len(gens)
    rd = [0.0] * len(gens)
    for i, a, b in zip(subset, ru_sel, rd_sel):
        ru[i], rd[i] = a, b
    return HourSolution(hour, tuple(committed), tuple(p), tuple(ru), tuple(rd), best[0][0])


def _better(key, other):
    cost, k, subset = key
    ocost, ok, osubset = other
    scale = max(1.0, abs(cost), abs(ocost))
    if abs(cost - ocost) > 1e-12 * scale:
        return cost < ocost
    return (k, subset) < (ok, osubset)


def _binding(problem: UcProblem, hour: int) -> str:
    gens = problem.generators
    demand = problem.demand[hour]
    if demand > sum(g.p_max for g in gens) + _TOL:
        return "demand exceeds total p_max"
    if demand + problem.residual_up > sum(g.p_max for g in gens) + _TOL:
        return "up reserve: demand + reserve exceeds total p_max"
    if demand < min(g.p_min for g in gens) - _TOL:
        return "minimum generation: demand below every p_min"
    return "down reserve: no commitment leaves enough room above p_min"


def solve_uc(problem: UcProblem) -> UcSolution:
    """Cost-minimal commitment, dispatch and reserve split for every hour.

    Ties in cost go to fewer committed units, then to the lexicographically
    smallest index set.  Reserves are spread over committed units in
    proportion to their headroom (up) and footroom (down).

    Raises:
        InfeasibleError: naming the first infeasible hour and the constraint
            that cannot be met.
    """
    if len(problem.generators) > MAX_ENUM_GENERATORS:
        raise ParameterError(f"exact enumeration supports at most {MAX_ENUM_GENERATORS} generators")
    hours = tuple(_solve_hour(problem, h) for h in range(len(problem.demand)))
    return _totals(problem, hours)


def _totals(problem, hours) -> UcSolution:
    em = grid_emissions_hours(hours, problem)
    return UcSolution(hours=hours, cost=float(sum(h.cost for h in hours)),
                      c_generation=em["c_generation"], c_reserve=em["c_reserve"],
                      plant_hours=sum(h.n_committed for h in hours))


def grid_emissions_hours(hours, problem: UcProblem) -> dict:
    gens = problem.generators
    r = problem.signal_samples()
    c_gen = 0.0
    c_res = 0.0
    for h in hours:
        for g, on, p, ru, rd in zip(gens, h.committed, h.p, h.ru, h.rd):
            if not on:
                continue
            base = _emissions(g, p)
            c_gen += base
            # generators move against the load: r > 0 draws on down reserve
            dev = -r * np.where(r > 0, rd, ru)
            x = np.clip(p + dev, g.p_min, g.p_max)
            c_res += float(np.mean(_emission_curve(g, x) - _emission_curve(g, p)))
    return {"c_generation": c_gen, "c_reserve": c_res, "total": c_gen + c_res}


def grid_emissions(solution: UcSolution, problem: UcProblem) -> dict:
    """Generation and reserve-performance emissions (tCO2) of a solution.

    ``c_reserve`` integrates each generator's emissions while it follows the
    reference signal with its reserve share, relative to holding nominal
    output.  A zero signal gives zero.
    """
    return grid_emissions_hours(solution.hours, problem)


def check_solution(solution: UcSolution, problem: UcProblem, tol: float = 1e-6) -> list:
    """Violated solution invariants (empty when the solution is valid)."""
    out = []
    gens = problem.generators
    for h in solution.hours:
        d = problem.demand[h.hour]
        if abs(sum(h.p) - d) > tol * max(1.0, d):
            out.append(f"hour {h.hour}: dispatch {sum(h.p):g} != demand {d:g}")
        if sum(h.ru) < problem.residual_up - tol:
            out.append(f"hour {h.hour}: up reserve short")
        if sum(h.rd) < problem.residual_down - tol:
            out.append(f"hour {h.hour}: down reserve short")
        for g, on, p, ru, rd in zip(gens, h.committed, h.p, h.ru, h.rd):
            if not on:
                if abs(p) > tol or abs(ru) > tol or abs(rd) > tol:
                    out.append(f"hour {h.hour}: {g.name} off but loaded")
                continue
            if ru < -tol or rd < -tol:
                out.append(f"hour {h.hour}: {g.name} negative reserve")
            if p - rd < g.p_min - tol or p + ru > g.p_max + tol:
                out.append(f"hour {h.hour}: {g.name} reserve outside [p_min, p_max]")
    return out


def mce_resv(problem: UcProblem, r_dc: float) -> dict:
    """Emission change per MW of data-center regulation provision.

    Solves the problem as given (``dc_regulation`` forced to zero) and again
    with ``dc_regulation = r_dc``.  The result is in tCO2 per MW over the
    problem horizon.
    """
    if not r_dc > 0:
        raise ParameterError("r_dc must be positive")
    without = solve_uc(replace(problem, dc_regulation=0.0))
    with_dc = solve_uc(replace(problem, dc_regulation=float(r_dc)))
    mce = (without.total_emissions - with_dc.total_emissions) / r_dc
    return {"mce": mce, "with": with_dc, "without": without}


def simple_mce(ci_resv: float, signal, horizon_h: float) -> float:
    """Naive reserve carbon: plant intensity times the energy actually swung."""
    if ci_resv < 0:
        raise ParameterError("ci_resv must be non-negative")
    r = np.asarray(getattr(signal, "samples", signal), dtype=float)
    if r.size == 0:
        return 0.0
    return float(ci_resv * np.mean(np.abs(r)) * horizon_h)


def brute_force_uc(problem: UcProblem) -> float:
    """Total cost by enumerating commitment sets with an LP dispatch in each.

    Independent of the merit-order dispatch: every set is solved as a linear
    program over outputs and explicit per-unit reserves.
    """
    from scipy.optimize import linprog

    gens = problem.generators
    n = len(gens)
    total = 0.0
    for hour, demand in enumerate(problem.demand):
        best = math.inf
        for mask in range(1, 2 ** n):
            sel = [gens[i] for i in range(n) if mask >> i & 1]
            k = len(sel)
            # variables: p (k), ru (k), rd (k)
            c = np.concatenate([[g.cost_c1 for g in sel], np.zeros(2 * k)])
            a_eq = np.concatenate([np.ones(k), np.zeros(2 * k)])[None, :]
            rows, rhs = [], []
            for j, g in enumerate(sel):
                row = np.zeros(3 * k)
                row[j], row[k + j] = 1, 1
                rows.append(row)
                rhs.append(g.p_max)
                row = np.zeros(3 * k)
                row[j], row[2 * k + j] = -1, 1
                rows.append(row)
                rhs.append(-g.p_min)
            row = np.zeros(3 * k)
            row[k:2 * k] = -1
            rows.append(row)
            rhs.append(-problem.residual_up)
            row = np.zeros(3 * k)
            row[2 * k:] = -1
            rows.append(row)
            rhs.append(-problem.residual_down)
            bounds = [(g.p_min, g.p_max) for g in sel] + [(0, None)] * (2 * k)
            res = linprog(c, A_ub=np.array(rows), b_ub=rhs, A_eq=a_eq, b_eq=[demand],
                          bounds=bounds, method="highs")
            if res.status == 0:
                best = min(best, res.fun + sum(g.cost_c0 for g in sel))
        if not math.isfinite(best):
            raise InfeasibleError(f"hour {hour}: no feasible commitment", hour=hour)
        total += best
    return total


def export_solution(solution: UcSolution, problem: UcProblem, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "generator", "committed", "p_mw", "ru_mw", "rd_mw"])
        for h in solution.hours:
            for g, on, p, ru, rd in zip(problem.generators, h.committed, h.p, h.ru, h.rd):
                w.writerow([h.hour, g.name, int(on), f"{p:.6f}", f"{ru:.6f}", f"{rd:.6f}"])
    return path


def solution_totals(solution: UcSolution) -> dict:
    return {"cost": solution.cost, "c_generation": solution.c_generation,
            "c_reserve": solution.c_reserve, "total": solution.total_emissions,
            "plant_hours": solution.plant_hours}


def figure_fleet(e_peak: float = 0.4, eta: float = 0.25, cost_c0: float = 500.0,
                 cost_c1: float = 30.0) -> tuple:
    """Four identical 50-100 MW gas units."""
    return tuple(Generator(f"gas{i + 1}", 50.0, 100.0, cost_c0, cost_c1, e_peak, eta)
                 for i in range(4))


def write_totals_json(data: dict, path):
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
