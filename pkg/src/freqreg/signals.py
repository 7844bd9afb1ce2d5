"""Regulation signals and LC workload-utilization traces.

Signals are normalized series in [-1, 1], one sample per ``step_seconds``
(2 s for RegD-style signals), with a per-step ramp bound.  Load traces are
utilization fractions in [0, 1].  All generated samples are quantized to six
decimal places so that CSV export/import is lossless.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, ParseError, ValidationError

DEFAULT_STEP_S = 2.0
DEFAULT_RAMP_LIMIT = 0.005
DECIMALS = 6
_QUANTUM = 10.0 ** -DECIMALS
# float slack when comparing a quantized step against the ramp bound
RAMP_TOL = 1e-9

# Extreme: mean dwell at +/-1
EXTREME_MEAN_DWELL_S = 240.0
# Noisy: fast mean-reverting part
NOISY_REVERSION = 0.02
NOISY_SIGMA = 0.003
# Noisy: slowly wandering mean the fast part reverts to
NOISY_MEAN_REVERSION = 0.01
NOISY_MEAN_SIGMA = 0.015
# HighTransition: traversal speed as a fraction of the ramp limit
HT_SPEED_RANGE = (0.85, 1.0)


class SignalKind(str, enum.Enum):
    EXTREME = "extreme"
    NOISY = "noisy"
    HIGH_TRANSITION = "high_transition"
    IMPORTED = "imported"

    @classmethod
    def parse(cls, value) -> "SignalKind":
        if isinstance(value, SignalKind):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"e": "extreme", "n": "noisy", "ht": "high_transition",
                   "hightransition": "high_transition"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ParameterError(f"unknown signal kind {value!r}") from None


@dataclass(frozen=True)
class RegulationSignal:
    samples: np.ndarray
    step_seconds: float = DEFAULT_STEP_S
    ramp_limit: float = DEFAULT_RAMP_LIMIT
    kind: SignalKind = SignalKind.IMPORTED

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        if arr.ndim != 1 or arr.size < 1:
            raise ParameterError("signal needs at least one sample")
        if not self.step_seconds > 0:
            raise ParameterError("step_seconds must be positive")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size * self.step_seconds


@dataclass(frozen=True)
class LoadTrace:
    samples: np.ndarray
    step_seconds: float = 60.0
    label: str = ""

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        if arr.ndim != 1 or arr.size < 1:
            raise ParameterError("trace needs at least one sample")
        if not self.step_seconds > 0:
            raise ParameterError("step_seconds must be positive")
        if np.any(arr < 0.0) or np.any(arr > 1.0) or not np.all(np.isfinite(arr)):
            raise ParameterError("trace samples must lie in [0, 1]")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size * self.step_seconds

    def resample(self, step_seconds: float, n: int) -> np.ndarray:
        """Zero-order hold onto ``n`` samples spaced ``step_seconds`` apart."""
        t = np.arange(n) * step_seconds
        idx = np.floor(t / self.step_seconds + 1e-9).astype(int)
        if idx.size and idx[-1] >= self.samples.size:
            raise ParameterError(
                f"trace covers {self.duration_s:g} s, need {n * step_seconds:g} s")
        return self.samples[idx]


@dataclass(frozen=True)
class TraceStats:
    mean_pct: float
    variance: float
    min_pct: float
    max_pct: float


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    index: int | None = None
    reason: str = ""

    def __bool__(self):
        return self.ok


# Table of SWIM-derived trace parameter sets: (mean %, variance %^2, min %, max %)
TABLE_TRACES = {
    "low-low": (28.66, 12.48, 23, 36),
    "low-med": (28.86, 16.78, 23, 40),
    "low-high": (29.33, 22.62, 24, 42),
    "med-low": (42.13, 6.51, 37, 46),
    "med-med": (50.13, 46.64, 35, 63),
    "med-high": (51.66, 177.55, 36, 73),
    "high-low": (73.33, 103.42, 55, 94),
    "high-med": (72.33, 116.22, 55, 92),
    "high-high": (70.73, 144.99, 52, 91),
}


def _n_steps(duration, step):
    if not step > 0:
        raise ParameterError("step must be positive")
    if not duration >= step:
        raise ParameterError("duration must be at least one step")
    return int(math.floor(duration / step + 1e-9))


def _quantize(x):
    return round(float(x), DECIMALS) + 0.0


def ramp_limit_series(raw, ramp_limit, start=None):
    """Follow ``raw`` while never moving more than ``ramp_limit`` per step.

    Output is clipped to [-1, 1] and quantized to six decimals; quantized
    steps are truncated toward zero so they never exceed the bound.
    """
    out = np.empty(len(raw))
    prev = _quantize(np.clip(raw[0] if start is None else start, -1.0, 1.0))
    out[0] = prev
    for k in range(1, len(raw)):
        want = min(1.0, max(-1.0, raw[k]))
        step = min(ramp_limit, max(-ramp_limit, want - prev))
        step = math.trunc(step / _QUANTUM) * _QUANTUM
        nxt = _quantize(min(1.0, max(-1.0, prev + step)))
        if abs(nxt - prev) > ramp_limit + RAMP_TOL:
            nxt = _quantize(prev + math.copysign(ramp_limit, step) * (1 - 1e-9))
        out[k] = prev = nxt
    return out


def _extreme(n, step, ramp, rng):
    # telegraph process: dwell at a rail, then ramp to the other rail
    raw = np.empty(n)
    level = 1.0 if rng.random() < 0.5 else -1.0
    pos = level
    k = 0
    while k < n:
        dwell = max(1, int(round(rng.exponential(EXTREME_MEAN_DWELL_S) / step)))
        raw[k:k + dwell] = level
        k += dwell
        level = -level
        while k < n and abs(pos - level) > 0:
            pos = level if abs(level - pos) <= ramp else pos + math.copysign(ramp, level - pos)
            raw[k] = pos
            k += 1
    return ramp_limit_series(raw, ramp)


def _high_transition(n, step, ramp, rng):
    # triangle wave at near-maximal slew, with jittered speed per leg
    raw = np.empty(n)
    pos = float(rng.uniform(-1.0, 1.0))
    direction = 1.0 if rng.random() < 0.5 else -1.0
    speed = ramp * rng.uniform(*HT_SPEED_RANGE)
    for k in range(n):
        raw[k] = pos
        nxt = pos + direction * speed
        if abs(nxt) >= 1.0:
            nxt = math.copysign(1.0, nxt)
            direction = -direction
            speed = ramp * rng.uniform(*HT_SPEED_RANGE)
        pos = nxt
    return ramp_limit_series(raw, ramp)


def _noisy(n, step, ramp, rng):
    # fast mean-reverting walk around a slowly wandering mean
    raw = np.empty(n)
    mean = 0.0
    x = 0.0
    for k in range(n):
        mean += -NOISY_MEAN_REVERSION * mean + rng.normal(0.0, NOISY_MEAN_SIGMA)
        x += NOISY_REVERSION * (mean - x) + rng.normal(0.0, NOISY_SIGMA)
        x = min(1.0, max(-1.0, x))
        raw[k] = x
    return ramp_limit_series(raw, ramp)


_GENERATORS = {
    SignalKind.EXTREME: _extreme,
    SignalKind.NOISY: _noisy,
    SignalKind.HIGH_TRANSITION: _high_transition,
}


def generate_signal(kind, duration=3600.0, step=DEFAULT_STEP_S,
                    ramp_limit=DEFAULT_RAMP_LIMIT, seed=0) -> RegulationSignal:
    """Synthesize a regulation signal of one of the three archetypes.

    Args:
        kind: ``extreme``, ``noisy`` or ``high_transition`` (or E/N/HT).
        duration: length in seconds.
        step: sample spacing in seconds.
        ramp_limit: max absolute change between consecutive samples.
        seed: RNG seed; identical arguments give identical samples.

    Returns:
        A RegulationSignal that passes :func:`validate_signal`.
    """
    kind = SignalKind.parse(kind)
    if kind not in _GENERATORS:
        raise ParameterError(f"cannot generate a {kind.value} signal")
    if not 0.0 < ramp_limit <= 2.0:
        raise ParameterError("ramp_limit must be in (0, 2]")
    n = _n_steps(duration, step)
    rng = np.random.default_rng(seed)
    samples = _GENERATORS[kind](n, step, ramp_limit, rng)
    return RegulationSignal(samples, step_seconds=float(step),
                            ramp_limit=float(ramp_limit), kind=kind)


def validate_signal(sig: RegulationSignal) -> ValidationResult:
    s = sig.samples
    bad = np.flatnonzero(~np.isfinite(s) | (s < -1.0) | (s > 1.0))
    ramp_bad = np.flatnonzero(np.abs(np.diff(s)) > sig.ramp_limit + RAMP_TOL) + 1
    first_range = int(bad[0]) if bad.size else None
    first_ramp = int(ramp_bad[0]) if ramp_bad.size else None
    if first_range is None and first_ramp is None:
        return ValidationResult(True)
    if first_ramp is None or (first_range is not None and first_range <= first_ramp):
        return ValidationResult(
            False, first_range, f"sample {first_range} = {s[first_range]!r} outside [-1, 1]")
    d = s[first_ramp] - s[first_ramp - 1]
    return ValidationResult(
        False, first_ramp,
        f"step into sample {first_ramp} is {d:+.6f}, exceeds ramp limit {sig.ramp_limit:g}")


def trace_stats(trace) -> TraceStats:
    """Population mean/variance/min/max in percent units."""
    s = np.asarray(getattr(trace, "samples", trace), dtype=float)
    if s.size == 0:
        raise ParameterError("empty trace")
    pct = 100.0 * s
    return TraceStats(mean_pct=float(pct.mean()), variance=float(pct.var()),
                      min_pct=float(pct.min()), max_pct=float(pct.max()))


def generate_load_trace(mean_pct, variance, min_pct, max_pct, duration=3600.0,
                        step=60.0, seed=0, phi=0.8, label="") -> LoadTrace:
    """Clipped AR(1) utilization trace matching a (mean, variance, min, max) row.

    The AR(1) draw is standardized, then scale and offset are iterated so that
    the clipped series hits the requested mean and variance.  Raises
    ParameterError when the bounds make the moments unreachable.
    """
    n = _n_steps(duration, step)
    if not 0 <= min_pct <= mean_pct <= max_pct <= 100:
        raise ParameterError("need 0 <= min <= mean <= max <= 100")
    if variance < 0:
        raise ParameterError("variance must be non-negative")
    # Bhatia-Davis bound on the variance of a bounded variable
    vmax = (mean_pct - min_pct) * (max_pct - mean_pct)
    if variance > vmax + 1e-12:
        raise ParameterError(
            f"variance {variance:g} impossible inside [{min_pct:g}, {max_pct:g}] "
            f"with mean {mean_pct:g} (max {vmax:g})")
    if variance == 0 or n == 1:
        samples = np.full(n, _quantize(mean_pct / 100.0))
        return LoadTrace(samples, step_seconds=float(step), label=label)

    rng = np.random.default_rng(seed)
    z = np.empty(n)
    z[0] = rng.normal()
    innov = math.sqrt(1.0 - phi * phi)
    for k in range(1, n):
        z[k] = phi * z[k - 1] + innov * rng.normal()
    z = (z - z.mean()) / z.std()

    sigma = math.sqrt(variance)
    offset, scale = float(mean_pct), sigma
    y = np.clip(offset + scale * z, min_pct, max_pct)
    for _ in range(200):
        sd = y.std()
        if sd > 0:
            scale *= sigma / sd
        offset += mean_pct - y.mean()
        y = np.clip(offset + scale * z, min_pct, max_pct)
        if abs(y.mean() - mean_pct) < 1e-6 and abs(y.var() - variance) < 1e-6 * variance:
            break
    samples = np.round(y / 100.0, DECIMALS) + 0.0
    stats = trace_stats(samples)
    if abs(stats.mean_pct - mean_pct) > 1.5 or abs(stats.variance - variance) > 0.25 * variance:
        raise ParameterError(
            f"could not reach mean {mean_pct:g} / variance {variance:g} inside "
            f"[{min_pct:g}, {max_pct:g}] (got {stats.mean_pct:.3f} / {stats.variance:.3f})")
    return LoadTrace(samples, step_seconds=float(step), label=label)


def table_trace(name, duration=3600.0, step=60.0, seed=0) -> LoadTrace:
    try:
        row = TABLE_TRACES[name]
    except KeyError:
        raise ParameterError(
            f"unknown trace {name!r}; choose from {', '.join(TABLE_TRACES)}") from None
    return generate_load_trace(*row, duration=duration, step=step, seed=seed, label=name)


def constant_trace(util, duration=3600.0, step=60.0, label="") -> LoadTrace:
    n = _n_steps(duration, step)
    return LoadTrace(np.full(n, _quantize(util)), step_seconds=float(step), label=label)


# --- CSV -------------------------------------------------------------------

_SCHEMAS = {"signal": ("t_s", "r"), "trace": ("t_s", "util")}


def export_series(obj, path):
    """Write a signal (``t_s,r``) or trace (``t_s,util``) CSV, 6 decimals."""
    col = "r" if isinstance(obj, RegulationSignal) else "util"
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"t_s,{col}\n")
        for k, v in enumerate(obj.samples):
            fh.write(f"{k * obj.step_seconds:.6f},{v + 0.0:.6f}\n")
    return path


def import_series(path, schema, ramp_limit=DEFAULT_RAMP_LIMIT, label=None):
    """Read a CSV series and validate it.

    Args:
        path: CSV file with a ``t_s,r`` (signal) or ``t_s,util`` (trace) header.
        schema: ``"signal"`` or ``"trace"``.
        ramp_limit: ramp bound attached to imported signals.

    Raises:
        ParseError: malformed content; carries the 1-based line number.
        ValidationError: values out of range; carries the sample index.
    """
    if schema not in _SCHEMAS:
        raise ParameterError(f"schema must be 'signal' or 'trace', got {schema!r}")
    path = Path(path)
    expected = _SCHEMAS[schema]
    times, values = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, header row required", path, 1) from None
        if tuple(h.strip() for h in header) != expected:
            raise ParseError(f"expected header {','.join(expected)!r}, got {','.join(header)!r}",
                             path, 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", path, line)
            try:
                t, v = float(row[0]), float(row[1])
            except ValueError:
                raise ParseError(f"non-numeric field in {row!r}", path, line) from None
            times.append(t)
            values.append(v)
    if not values:
        raise ParseError("no data rows", path, 2)

    if len(times) > 1:
        dt = np.diff(times)
        step = float(dt[0])
        if step <= 0 or np.any(np.abs(dt - step) > 1e-6):
            raise ParseError("t_s must be uniformly increasing", path)
    else:
        step = DEFAULT_STEP_S if schema == "signal" else 60.0
    arr = np.asarray(values)

    if schema == "signal":
        sig = RegulationSignal(arr, step_seconds=step, ramp_limit=ramp_limit,
                               kind=SignalKind.IMPORTED)
        res = validate_signal(sig)
        if not res:
            raise ValidationError(f"{path}: {res.reason}", res.index)
        return sig
    bad = np.flatnonzero((arr < 0) | (arr > 1) | ~np.isfinite(arr))
    if bad.size:
        i = int(bad[0])
        raise ValidationError(f"{path}: util sample {i} = {arr[i]!r} outside [0, 1]", i)
    return LoadTrace(arr, step_seconds=step, label=label or path.stem)
