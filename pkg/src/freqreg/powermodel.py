"""Parametric single-GPU power/throughput surrogate and multi-GPU server model.

Expected GPU power under a (cap, core fraction) pair is ``min(cap, U(f))`` with
``U(f) = cap_floor + (p_peak - cap_floor) * f**gamma``.  A paused GPU sits at
its active-idle power.  Measurement noise is multiplicative Gaussian.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ParameterError

_EPS = 1e-9


@dataclass(frozen=True)
class GpuModelParams:
    p_peak: float = 190.0
    cap_floor: float = 60.0
    cap_max: float = 190.0
    p_idle_paused: float = 2.0
    gamma: float = 0.8
    noise_cap_only: float = 0.02
    noise_with_cores: float = 0.08
    tp_cap_min: float = 0.6
    tp_core_min: float = 0.2
    # 60 compute units -> 1/60 granularity
    f_min: float = 1.0 / 60.0

    def __post_init__(self):
        if not 0 <= self.p_idle_paused < self.cap_floor < self.cap_max <= self.p_peak:
            raise ParameterError(
                "need 0 <= p_idle_paused < cap_floor < cap_max <= p_peak")
        if not (0 < self.tp_cap_min <= 1 and 0 < self.tp_core_min <= 1):
            raise ParameterError("throughput minima must be in (0, 1]")
        if not self.gamma > 0:
            raise ParameterError("gamma must be positive")
        if self.noise_cap_only < 0 or self.noise_with_cores < 0:
            raise ParameterError("noise levels must be non-negative")
        if not 0 < self.f_min <= 1:
            raise ParameterError("f_min must be in (0, 1]")

    @property
    def p_full(self) -> float:
        """Expected power at (cap_max, f=1)."""
        return min(self.cap_max, self.p_peak)

    def core_power(self, f: float) -> float:
        return self.cap_floor + (self.p_peak - self.cap_floor) * f ** self.gamma

    def core_fraction_for(self, power: float) -> float:
        """Smallest f whose core-limited power reaches ``power`` (inverse of U)."""
        span = self.p_peak - self.cap_floor
        x = (power - self.cap_floor) / span
        return min(1.0, max(self.f_min, x) ** (1.0 / self.gamma)) if x > 0 else self.f_min


@dataclass(frozen=True)
class GpuKnobState:
    paused: bool = False
    cap: float = 190.0
    core_fraction: float = 1.0


PAUSED = GpuKnobState(paused=True)


def check_knobs(params: GpuModelParams, knobs: GpuKnobState):
    if knobs.paused:
        return
    if not params.cap_floor - _EPS <= knobs.cap <= params.cap_max + _EPS:
        raise ParameterError(
            f"cap {knobs.cap:g} W outside [{params.cap_floor:g}, {params.cap_max:g}]")
    if not params.f_min - _EPS <= knobs.core_fraction <= 1.0 + _EPS:
        raise ParameterError(f"core fraction {knobs.core_fraction:g} outside "
                             f"[{params.f_min:g}, 1]")


def gpu_power(params: GpuModelParams, knobs: GpuKnobState) -> float:
    """Expected power draw in watts."""
    check_knobs(params, knobs)
    if knobs.paused:
        return params.p_idle_paused
    return min(knobs.cap, params.core_power(knobs.core_fraction))


def gpu_power_sample(params: GpuModelParams, knobs: GpuKnobState, rng) -> float:
    """One noisy power reading; the paused state is noise-free."""
    mean = gpu_power(params, knobs)
    if knobs.paused:
        return mean
    full_cores = knobs.core_fraction >= 1.0 - _EPS
    sigma = params.noise_cap_only if full_cores else params.noise_with_cores
    value = mean * (1.0 + sigma * rng.standard_normal())
    return min(params.p_peak, max(params.p_idle_paused, value))


def _clipped_normal_mean(mu, sd, lo, hi):
    if sd <= 0:
        return min(hi, max(lo, mu))
    a, b = (lo - mu) / sd, (hi - mu) / sd
    cdf = lambda x: 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
    pdf = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return (lo * cdf(a) + hi * (1.0 - cdf(b)) + mu * (cdf(b) - cdf(a))
            + sd * (pdf(a) - pdf(b)))


def gpu_power_profiled(params: GpuModelParams, knobs: GpuKnobState) -> float:
    """Mean of the clamped noisy reading: what profiling the GPU would report.

    Equals :func:`gpu_power` except where clamping at ``p_peak`` (or the idle
    floor) skews the reading distribution.
    """
    mean = gpu_power(params, knobs)
    if knobs.paused:
        return mean
    full_cores = knobs.core_fraction >= 1.0 - _EPS
    sigma = params.noise_cap_only if full_cores else params.noise_with_cores
    return _clipped_normal_mean(mean, mean * sigma, params.p_idle_paused, params.p_peak)


def gpu_throughput(params: GpuModelParams, knobs: GpuKnobState) -> float:
    """Throughput relative to an unconstrained GPU (1.0 at full cap and cores)."""
    check_knobs(params, knobs)
    if knobs.paused:
        return 0.0
    cap = min(max(knobs.cap, params.cap_floor), params.cap_max)
    t_cap = params.tp_cap_min + (1.0 - params.tp_cap_min) * (
        (cap - params.cap_floor) / (params.cap_max - params.cap_floor))
    f = min(max(knobs.core_fraction, params.f_min), 1.0)
    if params.f_min >= 1.0:
        t_core = 1.0
    else:
        t_core = params.tp_core_min + (1.0 - params.tp_core_min) * (
            (f - params.f_min) / (1.0 - params.f_min))
    return t_cap * t_core


# --- server ----------------------------------------------------------------

@dataclass(frozen=True)
class ServerSpec:
    n_gpus: int = 8
    gpu: GpuModelParams = field(default_factory=GpuModelParams)
    p_cpu_base: float = 150.0
    gpu_lc_peak: float = 160.0

    def __post_init__(self):
        if self.n_gpus < 1:
            raise ParameterError("n_gpus must be >= 1")
        if self.p_cpu_base < 0 or self.gpu_lc_peak < 0:
            raise ParameterError("power parameters must be non-negative")

    @property
    def nameplate_w(self) -> float:
        return self.p_cpu_base + self.n_gpus * max(self.gpu.p_full, self.gpu_lc_peak)


def lc_gpu_count(spec: ServerSpec, lc_load: float) -> int:
    """GPUs the LC workload occupies: the least number that fits the load."""
    if not -_EPS <= lc_load <= 1.0 + _EPS:
        raise ParameterError(f"lc_load {lc_load!r} outside [0, 1]")
    return min(spec.n_gpus, max(0, math.ceil(lc_load * spec.n_gpus - 1e-9)))


def lc_power(spec: ServerSpec, lc_load: float) -> float:
    """LC GPU power: full GPUs at ``gpu_lc_peak``, the last at its residue."""
    n = lc_gpu_count(spec, lc_load)
    if n == 0:
        return 0.0
    residue = lc_load * spec.n_gpus - (n - 1)
    return ((n - 1) + min(1.0, max(0.0, residue))) * spec.gpu_lc_peak


@dataclass(frozen=True)
class ServerState:
    """LC allocation and per-GPU knobs of the BE-owned GPUs.

    GPU indices are 1-based.  LC owns ``1..lc_gpus_active``; ``be_knobs`` maps
    BE-owned indices (all above the LC block) to their knob state.
    """

    lc_gpus_active: int
    be_knobs: tuple = ()
    lc_load: float = 0.0
    timestamp: float = 0.0

    def __post_init__(self):
        knobs = tuple(sorted(dict(self.be_knobs).items()))
        object.__setattr__(self, "be_knobs", knobs)

    @property
    def knobs(self) -> dict:
        return dict(self.be_knobs)

    @property
    def be_indices(self) -> list:
        return [i for i, _ in self.be_knobs]

    def validate(self, spec: ServerSpec):
        if self.lc_gpus_active < 0 or self.lc_gpus_active + len(self.be_knobs) > spec.n_gpus:
            raise ParameterError("LC + BE GPUs exceed n_gpus")
        for i, k in self.be_knobs:
            if not self.lc_gpus_active < i <= spec.n_gpus:
                raise ParameterError(f"BE GPU {i} overlaps the LC block or is out of range")
            check_knobs(spec.gpu, k)
        if self.lc_gpus_active != lc_gpu_count(spec, self.lc_load):
            raise ParameterError("lc_gpus_active inconsistent with lc_load")

    def with_knobs(self, knobs: dict) -> "ServerState":
        return replace(self, be_knobs=tuple(knobs.items()))


def initial_state(spec: ServerSpec, lc_load: float, be_knob: GpuKnobState | None = None,
                  timestamp: float = 0.0) -> ServerState:
    """LC block for ``lc_load``; every other GPU BE-owned with ``be_knob``."""
    n_lc = lc_gpu_count(spec, lc_load)
    knob = be_knob or GpuKnobState(cap=spec.gpu.cap_max)
    be = {i: knob for i in range(n_lc + 1, spec.n_gpus + 1)}
    return ServerState(n_lc, tuple(be.items()), lc_load, timestamp)


def server_power(spec: ServerSpec, state: ServerState) -> float:
    """Expected server power: CPU floor + LC GPUs + BE GPUs."""
    be = sum(gpu_power(spec.gpu, k) for _, k in state.be_knobs)
    return spec.p_cpu_base + lc_power(spec, state.lc_load) + be


def server_power_sample(spec: ServerSpec, state: ServerState, rng) -> float:
    """Measured server power; only BE GPU readings carry noise."""
    be = sum(gpu_power_sample(spec.gpu, k, rng) for _, k in state.be_knobs)
    return spec.p_cpu_base + lc_power(spec, state.lc_load) + be


def server_power_profiled(spec: ServerSpec, state: ServerState) -> float:
    """Server power as the profiled (mean measured) model predicts it."""
    be = sum(gpu_power_profiled(spec.gpu, k) for _, k in state.be_knobs)
    return spec.p_cpu_base + lc_power(spec, state.lc_load) + be


def profiled_full_power(params: GpuModelParams) -> float:
    return gpu_power_profiled(params, GpuKnobState(cap=params.cap_max))


def cap_for_profiled_power(params: GpuModelParams, power: float) -> float:
    """Smallest cap (f=1) whose profiled power reaches ``power``, by bisection."""
    lo, hi = params.cap_floor, params.cap_max
    if power <= gpu_power_profiled(params, GpuKnobState(cap=lo)):
        return lo
    if power >= profiled_full_power(params):
        return hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if gpu_power_profiled(params, GpuKnobState(cap=mid)) < power:
            lo = mid
        else:
            hi = mid
    return hi


def profiled_range(spec: ServerSpec, state: ServerState) -> tuple:
    """:func:`modulation_range` under the profiled power model."""
    base = spec.p_cpu_base + lc_power(spec, state.lc_load)
    m = len(state.be_knobs)
    return base + m * spec.gpu.p_idle_paused, base + m * profiled_full_power(spec.gpu)


def modulation_range(spec: ServerSpec, state: ServerState) -> tuple:
    """(min, max) expected server power reachable by re-knobbing BE GPUs only."""
    base = spec.p_cpu_base + lc_power(spec, state.lc_load)
    m = len(state.be_knobs)
    return base + m * spec.gpu.p_idle_paused, base + m * spec.gpu.p_full


# --- profiling -------------------------------------------------------------

PRECISION_GREEN = 0.90
PROFILE_SAMPLES = 20


@dataclass(frozen=True)
class ProfilePoint:
    cap_w: float
    core_fraction: float
    mean_power_w: float
    precision: float

    @property
    def green(self) -> bool:
        return self.precision >= PRECISION_GREEN


def profile_power_model(params: GpuModelParams, cap_grid, core_grid, seed=0,
                        samples=PROFILE_SAMPLES) -> list:
    """Tabulate sampled power over a (cap, core fraction) grid.

    Precision of a point is ``1 - mean(|sample - cap|) / cap``: how closely the
    drawn power follows the cap used as the power target.
    """
    caps = list(cap_grid)
    cores = list(core_grid)
    if not caps or not cores:
        raise ParameterError("profile grids must be non-empty")
    for c in caps:
        if not params.cap_floor - _EPS <= c <= params.cap_max + _EPS:
            raise ParameterError(f"cap {c:g} outside the knob range")
    for f in cores:
        if not params.f_min - _EPS <= f <= 1.0 + _EPS:
            raise ParameterError(f"core fraction {f:g} outside the knob range")
    rng = np.random.default_rng(seed)
    table = []
    for c in caps:
        for f in cores:
            knobs = GpuKnobState(cap=float(c), core_fraction=float(f))
            draws = np.array([gpu_power_sample(params, knobs, rng) for _ in range(samples)])
            precision = 1.0 - float(np.mean(np.abs(draws - c))) / c
            table.append(ProfilePoint(float(c), float(f), float(draws.mean()), precision))
    return table


def export_profile(table, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cap_w", "core_fraction", "mean_power_w", "precision"])
        for p in table:
            w.writerow([f"{p.cap_w:.6f}", f"{p.core_fraction:.6f}",
                        f"{p.mean_power_w:.6f}", f"{p.precision:.6f}"])
    return path
