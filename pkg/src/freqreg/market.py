"""Regulation-market mechanics for a single server.

Sign convention: a positive regulation signal asks the load to *increase*
consumption (regulation-down product, bounded by ``r_down``); a negative one
asks it to decrease (regulation-up, bounded by ``r_up``).

Units: power in W, energy prices in $/Wh, rewards in $ per W of provision per
hour, settlement in $ per hour.
"""

from __future__ import annotations

import enum
import itertools
import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError

# margin used for the strict inequalities on P_f.r.
EPSILON_W = 0.1
WINDOW_S = 900.0
MAX_SHIFT_S = 300.0
SHIFT_STEP_S = 10.0
DEGENERATE_TOL = 0.02
DEFAULT_PERF_SCORE = 0.9

CERTIFY_SCORE = 0.75
CERTIFY_RUN = 3
REVOKE_SCORE = 0.40


@dataclass(frozen=True)
class Bid:
    p_fr: float
    r_up: float
    r_down: float
    symmetric: bool = False

    def __post_init__(self):
        if self.r_up < 0 or self.r_down < 0:
            raise ParameterError("provisions must be non-negative")
        if self.symmetric and self.r_up != self.r_down:
            raise ParameterError("symmetric bid needs r_up == r_down")

    @property
    def provision(self) -> float:
        """Committed flexibility R; the smaller side for asymmetric bids."""
        return min(self.r_up, self.r_down)


@dataclass(frozen=True)
class MarketInputs:
    p_avg: float
    p_var: float
    p_max: float
    cost: float
    rew_up: float
    rew_down: float
    perf_score: float = DEFAULT_PERF_SCORE
    threshold: float = 1.0

    def __post_init__(self):
        if self.p_var < 0:
            raise ParameterError("p_var must be non-negative")
        if self.cost < 0 or self.rew_up < 0 or self.rew_down < 0:
            raise ParameterError("prices must be non-negative")
        if not (0 <= self.perf_score <= 1 and 0 <= self.threshold <= 1):
            raise ParameterError("perf_score and threshold must lie in [0, 1]")

    @property
    def floor(self) -> float:
        """Lowest power the server may be asked to reach: P_avg + P_var/2."""
        return self.p_avg + self.p_var / 2.0


@dataclass(frozen=True)
class PerformanceScore:
    delay: float
    accuracy: float
    precision: float
    window_start: float = 0.0

    @property
    def composite(self) -> float:
        return (self.delay + self.accuracy + self.precision) / 3.0


class CertStatus(str, enum.Enum):
    UNCERTIFIED = "uncertified"
    CERTIFIED = "certified"
    REVOKED = "revoked"


@dataclass(frozen=True)
class Settlement:
    energy_cost: float
    reward: float
    saving: float


@dataclass(frozen=True)
class BidDecision:
    """Optimizer result; ``bid`` is None when withdrawing from the hour."""

    bid: Bid | None
    predicted_saving: float | None

    @property
    def withdraw(self) -> bool:
        return self.bid is None


WITHDRAW = BidDecision(None, None)


def target_power(bid: Bid, r: float, p_avg: float | None = None) -> float:
    """Power the server should draw for signal value ``r``.

    The tracked baseline is the bid's ``p_fr``; ``p_avg`` is accepted for
    call-site symmetry with the market formula but not used.
    """
    if not -1.0 - 1e-12 <= r <= 1.0 + 1e-12:
        raise ParameterError(f"signal value {r!r} outside [-1, 1]")
    return bid.p_fr + r * (bid.r_down if r >= 0 else bid.r_up)


def target_series(bid: Bid, samples) -> np.ndarray:
    s = np.asarray(samples, dtype=float)
    if np.any(np.abs(s) > 1.0 + 1e-12):
        raise ParameterError("signal values outside [-1, 1]")
    return bid.p_fr + s * np.where(s >= 0, bid.r_down, bid.r_up)


# --- scoring ---------------------------------------------------------------

def normalized_response(bid: Bid, signal, achieved) -> np.ndarray:
    """Map achieved power onto the signal's [-1, 1] scale.

    Each sample is divided by the provision on the side the signal asks for;
    a zero-sized side borrows the other side's provision.
    """
    if bid.r_up <= 0 and bid.r_down <= 0:
        raise ParameterError("bid provides no regulation to score")
    s = np.asarray(signal, dtype=float)
    up = bid.r_up if bid.r_up > 0 else bid.r_down
    down = bid.r_down if bid.r_down > 0 else bid.r_up
    scale = np.where(s >= 0, down, up)
    return (np.asarray(achieved, dtype=float) - bid.p_fr) / scale


def _pearson(a, b):
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return 0.0
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def score_window(s, q, step_seconds, window_start=0.0) -> PerformanceScore:
    """Delay/accuracy/precision of one window of signal ``s`` vs response ``q``."""
    s = np.asarray(s, dtype=float)
    q = np.asarray(q, dtype=float)
    err = float(np.mean(np.abs(q - s)))
    precision = max(0.0, 1.0 - err)
    if s.std() < 1e-12:
        ok = 1.0 if err <= DEGENERATE_TOL else 0.0
        return PerformanceScore(ok, ok, precision, window_start)
    shift_step = max(1, int(round(SHIFT_STEP_S / step_seconds)))
    max_shift = int(round(MAX_SHIFT_S / step_seconds))
    n = s.size
    best, best_shift = -math.inf, 0
    for m in range(0, max_shift + 1, shift_step):
        if n - m < 2:
            break
        c = _pearson(s[:n - m], q[m:])
        if c > best + 1e-12:
            best, best_shift = c, m
    accuracy = min(1.0, max(0.0, best))
    delay_s = best_shift * step_seconds
    delay = (MAX_SHIFT_S - delay_s) / MAX_SHIFT_S
    return PerformanceScore(delay, accuracy, precision, window_start)


def performance_score(signal, records, bid: Bid, t0: float = 0.0) -> list:
    """Score tracking in consecutive 15-minute windows.

    Args:
        signal: RegulationSignal (or sample array) aligned with ``records``.
        records: StepRecord sequence, or an array of achieved power in W.
        bid: the bid in force; supplies ``p_fr`` and per-side provisions.
        t0: time offset of the first sample, for ``window_start``.
    """
    step = getattr(signal, "step_seconds", 2.0)
    s = np.asarray(getattr(signal, "samples", signal), dtype=float)
    if len(records) and hasattr(records[0], "achieved_w"):
        achieved = np.array([r.achieved_w for r in records])
    else:
        achieved = np.asarray(records, dtype=float)
    if achieved.size != s.size:
        raise ParameterError(f"{achieved.size} records for {s.size} signal samples")
    q = normalized_response(bid, s, achieved)
    w = int(round(WINDOW_S / step))
    n_win = s.size // w
    if n_win == 0:
        return [score_window(s, q, step, t0)]
    return [score_window(s[i * w:(i + 1) * w], q[i * w:(i + 1) * w], step, t0 + i * w * step)
            for i in range(n_win)]


def certify(history) -> CertStatus:
    """Certification after a run of three >= 0.75 scores; revoked below 0.40."""
    status = CertStatus.UNCERTIFIED
    run = 0
    for score in history:
        if status is CertStatus.UNCERTIFIED:
            run = run + 1 if score >= CERTIFY_SCORE else 0
            if run >= CERTIFY_RUN:
                status = CertStatus.CERTIFIED
        elif status is CertStatus.CERTIFIED and score < REVOKE_SCORE:
            status = CertStatus.REVOKED
    return status


def saving(inputs: MarketInputs, p_fr, r_up, r_down, perf=None):
    perf = inputs.perf_score if perf is None else perf
    reward = r_up * inputs.rew_up + r_down * inputs.rew_down
    return inputs.p_avg * inputs.cost - (p_fr * inputs.cost - reward * perf)


def hourly_settlement(bid: Bid, scores, inputs: MarketInputs) -> Settlement:
    if len(scores) == 0:
        raise ParameterError("settlement needs at least one score")
    perf = float(np.mean([getattr(s, "composite", s) for s in scores]))
    energy = bid.p_fr * inputs.cost
    reward = (bid.r_up * inputs.rew_up + bid.r_down * inputs.rew_down) * perf
    return Settlement(energy, reward, inputs.p_avg * inputs.cost - (energy - reward))


# --- bid optimization ------------------------------------------------------

def _check_inputs(inputs: MarketInputs):
    lo, hi = inputs.floor + EPSILON_W, inputs.p_max - EPSILON_W
    if not lo < hi:
        raise ParameterError(
            f"no room to bid: P_avg + P_var/2 = {inputs.floor:g} W vs P_max = {inputs.p_max:g} W")
    return lo, hi


def bid_violations(inputs: MarketInputs, bid: Bid, tol=1e-9) -> list:
    """Names of the bid constraints that ``bid`` breaks by more than ``tol``."""
    lo = inputs.floor
    out = []
    if not bid.p_fr > lo - tol:
        out.append("p_fr > p_avg + p_var/2")
    if not bid.p_fr < inputs.p_max + tol:
        out.append("p_fr < p_max")
    if bid.r_up < -tol or bid.r_up > bid.p_fr - lo + tol:
        out.append("0 <= r_up <= p_fr - (p_avg + p_var/2)")
    if bid.r_down < -tol or bid.r_down > inputs.p_max - bid.p_fr + tol:
        out.append("0 <= r_down <= p_max - p_fr")
    cost_fr = bid.p_fr * inputs.cost - (bid.r_up * inputs.rew_up
                                        + bid.r_down * inputs.rew_down) * inputs.perf_score
    if cost_fr > inputs.p_avg * inputs.cost * inputs.threshold + tol:
        out.append("cost_fr <= cost_avg * threshold")
    if bid.symmetric and abs(bid.r_up - bid.r_down) > 0:
        out.append("symmetric: r_up == r_down")
    return out


def optimize_bid(inputs: MarketInputs, symmetric: bool = False) -> BidDecision:
    """Maximize hourly saving over (P_f.r., R_up, R_down).

    The problem is a small LP; its optimum lies on a vertex of the feasible
    polytope, so every vertex (intersection of n active constraints) is
    enumerated.  Ties go to the smaller P_f.r., then the smaller provision.
    Returns WITHDRAW when the cost threshold cannot be met.
    """
    lo, hi = _check_inputs(inputs)
    L, P = inputs.floor, inputs.p_max
    perf, c = inputs.perf_score, inputs.cost
    budget = inputs.p_avg * c * inputs.threshold
    if symmetric:
        # x = (p, r)
        A = np.array([[-1, 0], [1, 0], [0, -1], [-1, 1], [1, 1],
                      [c, -perf * (inputs.rew_up + inputs.rew_down)]], dtype=float)
        b = np.array([-lo, hi, 0.0, -L, P, budget])
    else:
        # x = (p, u, d)
        A = np.array([[-1, 0, 0], [1, 0, 0], [0, -1, 0], [-1, 1, 0], [0, 0, -1], [1, 0, 1],
                      [c, -perf * inputs.rew_up, -perf * inputs.rew_down]], dtype=float)
        b = np.array([-lo, hi, 0.0, -L, 0.0, P, budget])
    dim = A.shape[1]
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0] = 1.0
    tol = 1e-9 * max(1.0, abs(P))

    best = None
    for rows in itertools.combinations(range(A.shape[0]), dim):
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-14:
            continue
        x = np.linalg.solve(sub, b[list(rows)])
        if np.any((A @ x - b) / norms > tol):
            continue
        p = float(x[0])
        u, d = (float(x[1]), float(x[1])) if symmetric else (float(x[1]), float(x[2]))
        u, d = max(0.0, u), max(0.0, d)
        val = saving(inputs, p, u, d)
        key = (-val, p, u + d)
        if best is None or _better(key, best[0]):
            best = (key, p, u, d, val)
    if best is None:
        return WITHDRAW
    _, p, u, d, val = best
    p = min(max(p, lo), hi)
    u = min(u, p - L)
    d = min(d, P - p)
    if symmetric:
        u = d = min(u, d)
    bid = Bid(p, u, d, symmetric)
    return BidDecision(bid, saving(inputs, p, u, d))


def _better(key, other, rel=1e-12):
    (v1, p1, s1), (v2, p2, s2) = key, other
    scale = max(1.0, abs(v1), abs(v2))
    if v1 < v2 - rel * scale:
        return True
    if v1 > v2 + rel * scale:
        return False
    if p1 < p2 - 1e-9:
        return True
    if p1 > p2 + 1e-9:
        return False
    return s1 < s2 - 1e-9


def oracle_bid_search(inputs: MarketInputs, symmetric: bool = False,
                      grid_steps: int = 10_000) -> BidDecision:
    """Exhaustive grid over P_f.r. with provisions at their upper bounds.

    Rewards are non-negative, so for a fixed P_f.r. the saving is maximized by
    the largest admissible provisions; a zero-priced side is left at zero.
    """
    if grid_steps < 100:
        raise ParameterError("grid_steps must be >= 100")
    lo, hi = _check_inputs(inputs)
    p = np.linspace(lo, hi, grid_steps)
    u_max = p - inputs.floor
    d_max = inputs.p_max - p
    if symmetric:
        r = np.minimum(u_max, d_max)
        if inputs.perf_score * (inputs.rew_up + inputs.rew_down) <= 0:
            r = np.zeros_like(r)
        u = d = r
    else:
        u = u_max if inputs.perf_score * inputs.rew_up > 0 else np.zeros_like(p)
        d = d_max if inputs.perf_score * inputs.rew_down > 0 else np.zeros_like(p)
    reward = (u * inputs.rew_up + d * inputs.rew_down) * inputs.perf_score
    cost_fr = p * inputs.cost - reward
    ok = cost_fr <= inputs.p_avg * inputs.cost * inputs.threshold
    if not ok.any():
        return WITHDRAW
    vals = np.where(ok, inputs.p_avg * inputs.cost - cost_fr, -np.inf)
    i = int(np.argmax(vals))
    bid = Bid(float(p[i]), float(u[i]), float(d[i]), symmetric)
    return BidDecision(bid, float(vals[i]))


def saving_slope_bound(inputs: MarketInputs) -> float:
    """Upper bound on |d saving / d P_f.r.| along the oracle's search line."""
    return inputs.cost + inputs.perf_score * (inputs.rew_up + inputs.rew_down)


def export_scores(scores, path):
    """CSV ``window_start_s,delay,accuracy,precision,composite``."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_start_s", "delay", "accuracy", "precision", "composite"])
        for s in scores:
            w.writerow([f"{s.window_start:.6f}", f"{s.delay:.6f}", f"{s.accuracy:.6f}",
                        f"{s.precision:.6f}", f"{s.composite:.6f}"])
    return path


def export_settlements(rows, path):
    """CSV ``hour,energy_cost,reward,saving`` from ``(hour, Settlement)`` pairs."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "energy_cost", "reward", "saving"])
        for hour, st in rows:
            w.writerow([hour, f"{st.energy_cost:.9f}", f"{st.reward:.9f}", f"{st.saving:.9f}"])
    return path
