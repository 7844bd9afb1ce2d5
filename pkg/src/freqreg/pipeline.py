"""Hourly regulation loop for one server: bid, track, score, settle.

Each hour the bid inputs are read off the LC load forecast for that hour.
The flexible band of the server runs from the LC-only power (every BE GPU
paused) to the LC power plus every BE GPU at full cap.  The bid is derived
from the strictest band quantile that still leaves room to bid: quantile 1.0
uses the worst case over the hour, so a bid made there never asks for power
the server cannot reach.  Under heavy LC load the worst case leaves no room,
and the band is relaxed step by step.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import market
from .controller import aggregate_throughput, run_tracking
from .errors import ParameterError
from .powermodel import ServerSpec, lc_gpu_count, lc_power, profiled_full_power
from .signals import RegulationSignal

BAND_QUANTILES = (1.0, 0.95, 0.9, 0.85, 0.8, 0.75, 0.7)
HOUR_S = 3600.0


@dataclass(frozen=True)
class Prices:
    """Market prices in $/Wh (energy) and $/W·h (provision)."""

    cost: float = 3e-5
    rew_up: float = 6e-5
    rew_down: float = 6e-5
    threshold: float = 1.0

    def __post_init__(self):
        if min(self.cost, self.rew_up, self.rew_down) < 0:
            raise ParameterError("prices must be non-negative")
        if not 0 <= self.threshold <= 1:
            raise ParameterError("threshold must lie in [0, 1]")


@dataclass
class HourResult:
    hour: int
    inputs: market.MarketInputs | None
    decision: market.BidDecision
    quantile: float | None
    records: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    settlement: market.Settlement | None = None

    @property
    def mean_composite(self) -> float | None:
        if not self.scores:
            return None
        return float(np.mean([s.composite for s in self.scores]))


def split_seed(root: int, name: str) -> int:
    """Deterministic child seed of ``root`` for the component ``name``."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


def power_envelope(spec: ServerSpec, loads) -> tuple:
    """Per-sample (LC-only, full-BE) server power for an LC load series."""
    gpu = spec.gpu
    full = profiled_full_power(gpu)
    lo, hi = [], []
    for load in np.asarray(loads, dtype=float):
        base = spec.p_cpu_base + lc_power(spec, float(load))
        n_be = spec.n_gpus - lc_gpu_count(spec, float(load))
        lo.append(base + n_be * gpu.p_idle_paused)
        hi.append(base + n_be * full)
    return np.array(lo), np.array(hi)


def market_inputs(spec: ServerSpec, loads, prices: Prices, perf: float,
                  quantile: float = 1.0) -> market.MarketInputs:
    """Bid inputs for one hour of LC load at a given band quantile.

    ``p_avg`` is the mean LC-only power, ``p_avg + p_var/2`` its
    ``quantile``-quantile, and ``p_max`` the ``1 - quantile`` quantile of the
    full-BE power.
    """
    if not 0.5 < quantile <= 1.0:
        raise ParameterError("band quantile must lie in (0.5, 1]")
    lo, hi = power_envelope(spec, loads)
    p_avg = float(lo.mean())
    top = float(np.quantile(lo, quantile))
    p_max = float(np.quantile(hi, 1.0 - quantile))
    return market.MarketInputs(p_avg=p_avg, p_var=2.0 * max(0.0, top - p_avg), p_max=p_max,
                               cost=prices.cost, rew_up=prices.rew_up,
                               rew_down=prices.rew_down, perf_score=perf,
                               threshold=prices.threshold)


def choose_bid(spec: ServerSpec, loads, prices: Prices, perf: float = market.DEFAULT_PERF_SCORE,
               symmetric: bool = True, quantiles=BAND_QUANTILES) -> tuple:
    """Bid from the strictest band quantile that yields a regulation offer.

    Returns ``(inputs, decision, quantile)``.  When no quantile yields a
    positive provision the decision is WITHDRAW and ``quantile`` is None;
    ``inputs`` is then the strictest feasible instance, or None when even the
    loosest band leaves no room.
    """
    first = None
    for q in quantiles:
        inputs = market_inputs(spec, loads, prices, perf, q)
        if inputs.floor + 2 * market.EPSILON_W >= inputs.p_max:
            continue
        if first is None:
            first = inputs
        decision = market.optimize_bid(inputs, symmetric=symmetric)
        if not decision.withdraw and decision.bid.provision > 0:
            return inputs, decision, q
    return first, market.WITHDRAW, None


def simulate(spec: ServerSpec, lc_trace, signal: RegulationSignal, prices: Prices,
             seed: int = 0, hours: int | None = None, symmetric: bool = True,
             quantiles=BAND_QUANTILES) -> list:
    """Run the hourly loop over ``hours`` (default: every full hour of signal).

    The performance score fed to each hour's bid is the previous bidding
    hour's mean composite, starting at 0.9.  In a withdrawn hour BE runs
    unmodulated and the hour settles at zero saving.
    """
    step = signal.step_seconds
    per_hour = int(round(HOUR_S / step))
    n_hours = len(signal.samples) // per_hour
    if hours is not None:
        if hours > n_hours:
            raise ParameterError(f"signal covers {n_hours} h, {hours} h requested")
        n_hours = hours
    if n_hours < 1:
        raise ParameterError("signal shorter than one hour")
    n = n_hours * per_hour
    if hasattr(lc_trace, "resample"):
        loads = lc_trace.resample(step, n)
    else:
        loads = np.asarray(lc_trace, dtype=float)[:n]
        if loads.size != n:
            raise ParameterError("LC load series shorter than the horizon")
    samples = np.asarray(signal.samples, dtype=float)
    track_seed = split_seed(seed, "tracking")

    perf = market.DEFAULT_PERF_SCORE
    state = None
    results = []
    for h in range(n_hours):
        sl = slice(h * per_hour, (h + 1) * per_hour)
        hour_loads = loads[sl]
        hour_signal = RegulationSignal(tuple(samples[sl]), step, signal.ramp_limit, signal.kind)
        inputs, decision, q = choose_bid(spec, hour_loads, prices, perf, symmetric, quantiles)
        t0 = h * HOUR_S
        records, state = run_tracking(spec, hour_loads, hour_signal, decision.bid,
                                      seed=track_seed + h, t0=t0, state=state)
        result = HourResult(h, inputs, decision, q, records)
        if decision.withdraw:
            energy = inputs.p_avg * prices.cost if inputs is not None else 0.0
            result.settlement = market.Settlement(energy, 0.0, 0.0)
        else:
            result.scores = market.performance_score(hour_signal, records, decision.bid, t0)
            result.settlement = market.hourly_settlement(decision.bid, result.scores, inputs)
            perf = result.mean_composite
        results.append(result)
    return results


def summarize(results, spec: ServerSpec) -> dict:
    """Run-level aggregates used by the reports."""
    records = [r for h in results for r in h.records]
    scores = [s.composite for h in results for s in h.scores]
    provisions = [0.0 if h.decision.withdraw else h.decision.bid.provision for h in results]
    step = (records[1].t_s - records[0].t_s) if len(records) > 1 else 2.0
    be_lost = sum(r.be_gpus * (1.0 - r.be_throughput) for r in records) * step / HOUR_S
    return {
        "hours": len(results),
        "bid_hours": sum(not h.decision.withdraw for h in results),
        "mean_provision_w": float(np.mean(provisions)) if provisions else 0.0,
        "mean_composite": float(np.mean(scores)) if scores else None,
        "min_composite": float(np.min(scores)) if scores else None,
        "energy_wh": float(sum(r.achieved_w for r in records) * step / 3600.0),
        "be_throughput": aggregate_throughput(records)["be_throughput"] if records else 1.0,
        "be_gpu_hours_lost": float(be_lost),
        "saving": float(sum(h.settlement.saving for h in results)),
        "reward": float(sum(h.settlement.reward for h in results)),
        "nameplate_w": spec.nameplate_w,
    }
