"""2-second power-reshaping controller for one multi-GPU server.

LC GPUs fill from index 1 upward and are never touched.  BE GPUs own the
remaining (highest) indices.  Power is shed by lowering caps starting at the
lowest BE index, pausing a GPU once everything active sits at the cap floor;
it is added back by raising caps from the highest index, then resuming the
next paused GPU at the floor and trimming the others to absorb the jump.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import market
from .errors import ParameterError
from .powermodel import (PAUSED, GpuKnobState, ServerSpec, ServerState,
                         cap_for_profiled_power, gpu_power_profiled, gpu_throughput,
                         lc_gpu_count, lc_power, profiled_full_power,
                         profiled_range, server_power_profiled, server_power_sample)

FINE_TUNE_THRESHOLD_W = 3.0
CORE_QUANTUM = 1.0 / 60.0
CAP_STEP_W = 1.0

NO_FLEXIBILITY = "no_flexibility"
CLAMPED = "clamped"


@dataclass(frozen=True)
class Action:
    kind: str  # "set_cap" | "set_core_fraction" | "pause" | "resume"
    gpu: int
    value: float | None = None

    def __str__(self):
        if self.value is None:
            return f"{self.kind}({self.gpu})"
        return f"{self.kind}({self.gpu},{self.value:g})"


@dataclass(frozen=True)
class ActionPlan:
    actions: tuple = ()
    target_w: float = 0.0
    # target after clamping to the achievable range
    planned_w: float = 0.0
    expected_w: float = 0.0
    event: str | None = None

    def __len__(self):
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)


@dataclass(frozen=True)
class StepRecord:
    t_s: float
    target_w: float
    achieved_w: float
    lc_w: float
    be_throughput: float
    be_gpus: int = 0
    expected_w: float = 0.0
    plan: ActionPlan = field(default_factory=ActionPlan)
    event: str | None = None


def lc_gpu_allocation(spec: ServerSpec, lc_load: float) -> int:
    return lc_gpu_count(spec, lc_load)


def be_candidates(spec: ServerSpec, lc_load: float) -> list:
    """BE-ownable GPU indices, highest first."""
    return list(range(spec.n_gpus, lc_gpu_allocation(spec, lc_load), -1))


def _floor_power(gpu):
    return gpu_power_profiled(gpu, GpuKnobState(cap=gpu.cap_floor))


def _active_range(k, m, resumed, gpu):
    floor, full = _floor_power(gpu), profiled_full_power(gpu)
    lo = k * floor + (m - k) * gpu.p_idle_paused
    hi = resumed * floor + (k - resumed) * full + (m - k) * gpu.p_idle_paused
    return lo, hi


def _choose_active(budget, m, k_cur, gpu):
    """Number of running BE GPUs for a BE power budget, preferring no change."""
    def rng(k):
        return _active_range(k, m, max(0, k - k_cur), gpu)

    lo, hi = rng(k_cur) if k_cur > 0 else (m * gpu.p_idle_paused,) * 2
    if k_cur > 0 and lo - 1e-9 <= budget <= hi + 1e-9:
        return k_cur
    if budget > hi:
        if k_cur == 0:
            # between all-paused and one GPU at the floor: take the nearer
            one_lo = _active_range(1, m, 1, gpu)[0]
            if budget < one_lo and budget - hi < one_lo - budget:
                return 0
        for k in range(k_cur + 1, m + 1):
            lo_k, hi_k = rng(k)
            if budget <= hi_k + 1e-9:
                if budget >= lo_k - 1e-9 or k == k_cur + 1:
                    return k
        return m
    for k in range(k_cur - 1, -1, -1):
        if k == 0:
            # between all-paused and one GPU at the floor: take the nearer
            one_lo = _active_range(1, m, 0, gpu)[0]
            idle = m * gpu.p_idle_paused
            return 0 if budget - idle < one_lo - budget else 1
        if budget >= rng(k)[0] - 1e-9:
            return k
    return 0


def _canonical_caps(active, resumed, budget_active, gpu, cap_step):
    """Caps for the running GPUs (ascending index) summing to ``budget_active``.

    Every GPU starts at full power (resumed ones at the floor) and power is
    shaved from the lowest index upward, each GPU down to the cap floor.
    """
    floor, full = _floor_power(gpu), profiled_full_power(gpu)
    upper = {i: (floor if i in resumed else full) for i in active}
    power = dict(upper)
    excess = sum(upper.values()) - budget_active
    for i in active:
        if excess <= 0:
            break
        cut = min(excess, power[i] - floor)
        power[i] -= cut
        excess -= cut
    caps = {}
    for i in active:
        p = power[i]
        if p >= full - 1e-9:
            caps[i] = gpu.cap_max
        else:
            p = cap_for_profiled_power(gpu, p)
            if cap_step > 0:
                p = math.ceil(p / cap_step - 1e-9) * cap_step
            caps[i] = min(gpu.cap_max, max(gpu.cap_floor, p))
    return caps


def plan_step(spec: ServerSpec, state: ServerState, target_power: float,
              fine_tune_threshold: float = FINE_TUNE_THRESHOLD_W,
              cap_step: float = CAP_STEP_W) -> ActionPlan:
    """Knob changes that move expected server power to ``target_power``.

    Planning uses the profiled power model (the mean of clamped noisy
    readings), which coincides with the expected-power surrogate when the
    measurement noise is zero.

    Out-of-range targets are clamped to the achievable range (event
    ``clamped``); with no BE GPUs the plan is empty (event
    ``no_flexibility``).  A remaining error above ``fine_tune_threshold`` is
    trimmed by reducing the core fraction of a single GPU.
    """
    gpu = spec.gpu
    knobs = state.knobs
    current = server_power_profiled(spec, state)
    be = sorted(knobs)
    m = len(be)
    if m == 0:
        return ActionPlan((), target_power, current, current, NO_FLEXIBILITY)

    p_lo, p_hi = profiled_range(spec, state)
    planned = min(p_hi, max(p_lo, target_power))
    event = CLAMPED if abs(planned - target_power) > 1e-9 else None
    if abs(current - planned) <= 1e-9:
        return ActionPlan((), target_power, planned, current, event)

    base = spec.p_cpu_base + lc_power(spec, state.lc_load)
    budget = planned - base
    running = [i for i in be if not knobs[i].paused]
    k = _choose_active(budget, m, len(running), gpu)

    active = be[m - k:]
    resumed = {i for i in active if knobs[i].paused}
    budget_active = budget - (m - k) * gpu.p_idle_paused
    caps = _canonical_caps(active, resumed, budget_active, gpu, cap_step)

    new = {i: PAUSED for i in be}
    for i in active:
        new[i] = GpuKnobState(paused=False, cap=caps[i], core_fraction=1.0)

    expected = base + sum(gpu_power_profiled(gpu, kn) for kn in new.values())
    residual = expected - planned
    if residual > fine_tune_threshold:
        # shave with cores on one GPU that can absorb the whole residual
        for i in reversed(active):
            kn = new[i]
            want = gpu_power_profiled(gpu, kn) - residual
            if want >= gpu.core_power(gpu.f_min):
                f = math.ceil(gpu.core_fraction_for(want) / CORE_QUANTUM - 1e-9) * CORE_QUANTUM
                f = min(1.0, max(gpu.f_min, f))
                new[i] = replace(kn, core_fraction=f)
                break
        expected = base + sum(gpu_power_profiled(gpu, kn) for kn in new.values())

    actions = []
    for i in be:
        old, nxt = knobs[i], new[i]
        if nxt.paused:
            if not old.paused:
                actions.append(Action("pause", i))
            continue
        if old.paused:
            actions.append(Action("resume", i))
            actions.append(Action("set_cap", i, gpu.cap_floor))
            if abs(nxt.cap - gpu.cap_floor) > 1e-9:
                raise AssertionError("resumed GPU must start at the cap floor")
        elif abs(nxt.cap - old.cap) > 1e-9:
            actions.append(Action("set_cap", i, nxt.cap))
        if abs(nxt.core_fraction - old.core_fraction) > 1e-12:
            actions.append(Action("set_core_fraction", i, nxt.core_fraction))
    return ActionPlan(tuple(actions), target_power, planned, expected, event)


def apply_plan(spec: ServerSpec, state: ServerState, plan: ActionPlan) -> ServerState:
    knobs = state.knobs
    lc = state.lc_gpus_active
    for a in plan:
        if a.gpu not in knobs or a.gpu <= lc:
            raise ParameterError(f"action {a} targets a GPU the BE workload does not own")
        k = knobs[a.gpu]
        if a.kind == "pause":
            knobs[a.gpu] = PAUSED
        elif a.kind == "resume":
            knobs[a.gpu] = GpuKnobState(paused=False, cap=spec.gpu.cap_floor, core_fraction=1.0)
        elif a.kind == "set_cap":
            knobs[a.gpu] = replace(k, cap=float(a.value))
        elif a.kind == "set_core_fraction":
            knobs[a.gpu] = replace(k, core_fraction=float(a.value))
        else:
            raise ParameterError(f"unknown action kind {a.kind!r}")
    return state.with_knobs(knobs)


def reallocate(spec: ServerSpec, state: ServerState, lc_load: float, t_s: float) -> ServerState:
    """Move the LC/BE boundary for a new LC load.

    GPUs taken by LC leave the BE set; GPUs released by LC join it paused.
    """
    n_lc = lc_gpu_allocation(spec, lc_load)
    old = state.knobs
    knobs = {i: old.get(i, PAUSED) for i in range(n_lc + 1, spec.n_gpus + 1)}
    return ServerState(n_lc, tuple(knobs.items()), lc_load, t_s)


def step_throughput(spec: ServerSpec, state: ServerState) -> float:
    ks = [k for _, k in state.be_knobs]
    if not ks:
        return 0.0
    return float(np.mean([gpu_throughput(spec.gpu, k) for k in ks]))


def run_tracking(spec: ServerSpec, lc_trace, signal, bid, seed=0,
                 fine_tune_threshold=FINE_TUNE_THRESHOLD_W, cap_step=CAP_STEP_W,
                 t0=0.0, state=None, targets=None):
    """Closed-loop tracking of ``signal`` around ``bid`` under an LC trace.

    Each step reads the LC load (zero-order hold of ``lc_trace``), moves the
    LC/BE boundary, computes the target from the bid and the signal value,
    plans and applies knob changes, and records a noisy power measurement.
    ``bid=None`` runs BE unmodulated at full power.  ``targets`` overrides the
    per-step target series.  Returns ``(records, final_state)``.
    """
    samples = np.asarray(signal.samples)
    n = samples.size
    step = signal.step_seconds
    if hasattr(lc_trace, "resample"):
        loads = lc_trace.resample(step, n)
    else:
        loads = np.asarray(lc_trace, dtype=float)
        if loads.size != n:
            raise ParameterError("LC load series must match the signal length")
    if targets is None and bid is not None:
        targets = market.target_series(bid, samples)
    rng = np.random.default_rng(seed)

    if state is None:
        state = ServerState(0, (), 0.0, t0)
        state = reallocate(spec, state, float(loads[0]), t0)
        state = state.with_knobs({i: GpuKnobState(cap=spec.gpu.cap_max) for i in state.knobs})
    records = []
    for k in range(n):
        t = t0 + k * step
        state = reallocate(spec, state, float(loads[k]), t)
        if targets is None:
            target = profiled_range(spec, state)[1]
        else:
            target = float(targets[k])
        plan = plan_step(spec, state, target, fine_tune_threshold, cap_step)
        state = apply_plan(spec, state, plan)
        achieved = server_power_sample(spec, state, rng)
        records.append(StepRecord(
            t_s=t, target_w=target, achieved_w=achieved,
            lc_w=spec.p_cpu_base + lc_power(spec, state.lc_load),
            be_throughput=step_throughput(spec, state), be_gpus=len(state.be_knobs),
            expected_w=server_power_profiled(spec, state), plan=plan, event=plan.event))
    return records, state


def aggregate_throughput(records) -> dict:
    """Time-averaged BE throughput over BE-owned GPU-steps.

    Normalized to an unmodulated baseline with every BE GPU at full cap and
    cores.  LC throughput is 1.0 because LC GPUs are never modulated.  With
    no BE GPU-steps at all nothing was lost, so BE throughput is 1.0.
    """
    if not records:
        raise ParameterError("no records")
    gpu_steps = sum(r.be_gpus for r in records)
    if gpu_steps == 0:
        be = 1.0
    else:
        be = sum(r.be_throughput * r.be_gpus for r in records) / gpu_steps
    return {"lc_throughput": 1.0, "be_throughput": float(be)}


def export_records(records, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "target_w", "achieved_w", "lc_w", "be_throughput"])
        for r in records:
            w.writerow([f"{r.t_s:.6f}", f"{r.target_w:.6f}", f"{r.achieved_w:.6f}",
                        f"{r.lc_w:.6f}", f"{r.be_throughput:.6f}"])
    return path
