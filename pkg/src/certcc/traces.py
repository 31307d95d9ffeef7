"""Bandwidth traces: generators for the synthetic shapes and file round-trip.

Trace files are plain text, one sample per line: `<time_ms> <capacity_mbps>`
with step-hold semantics between samples. The final line is a sentinel at
the trace end, so its timestamp doubles as the duration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Trace",
    "mbps_to_pps",
    "pps_to_mbps",
    "constant_trace",
    "square_trace",
    "ramp_drop_trace",
    "triangle_trace",
    "generate_trace",
    "save_trace",
    "load_trace",
    "TRACE_SHAPES",
]

DEFAULT_MTU = 1500


def mbps_to_pps(mbps: float, mtu_bytes: int = DEFAULT_MTU) -> float:
    return mbps * 1e6 / (8.0 * mtu_bytes)


def pps_to_mbps(pps: float, mtu_bytes: int = DEFAULT_MTU) -> float:
    return pps * 8.0 * mtu_bytes / 1e6


@dataclass(frozen=True)
class Trace:
    """Step-hold capacity schedule in packets per second."""

    times_ms: np.ndarray
    rates_pps: np.ndarray
    duration_ms: float

    def __post_init__(self) -> None:
        t = np.asarray(self.times_ms, dtype=np.float64)
        r = np.asarray(self.rates_pps, dtype=np.float64)
        if t.size == 0 or t.size != r.size:
            raise ValueError("trace needs matching, non-empty time and rate arrays")
        if t[0] != 0.0:
            raise ValueError("trace must start at time 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trace times must be strictly increasing")
        if np.any(r <= 0):
            raise ValueError("trace capacities must be positive")
        if self.duration_ms < t[-1]:
            raise ValueError("duration must cover all samples")
        t.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "times_ms", t)
        object.__setattr__(self, "rates_pps", r)
        object.__setattr__(self, "duration_ms", float(self.duration_ms))

    def capacity_at(self, t_ms: float) -> float:
        """Capacity in packets/s at time t (step-hold)."""
        idx = np.searchsorted(self.times_ms, t_ms, side="right") - 1
        return float(self.rates_pps[max(idx, 0)])

    def mean_rate_pps(self) -> float:
        """Time-weighted mean capacity over the full duration."""
        edges = np.append(self.times_ms, self.duration_ms)
        spans = np.diff(edges)
        return float(np.sum(self.rates_pps * spans) / max(self.duration_ms, 1e-9))


def _build(times, mbps, duration_ms, mtu) -> Trace:
    rates = [mbps_to_pps(v, mtu) for v in mbps]
    return Trace(times_ms=np.array(times, dtype=np.float64),
                 rates_pps=np.array(rates, dtype=np.float64),
                 duration_ms=float(duration_ms))


def constant_trace(mbps: float, duration_s: float, mtu: int = DEFAULT_MTU) -> Trace:
    if mbps <= 0 or duration_s <= 0:
        raise ValueError("capacity and duration must be positive")
    return _build([0.0], [mbps], duration_s * 1000.0, mtu)


def square_trace(lo_mbps: float, hi_mbps: float, period_s: float, duration_s: float,
                 mtu: int = DEFAULT_MTU) -> Trace:
    """Capacity alternating between lo and hi at every period boundary."""
    if min(lo_mbps, hi_mbps) <= 0 or period_s <= 0 or duration_s <= 0:
        raise ValueError("capacities, period, and duration must be positive")
    period_ms = period_s * 1000.0
    duration_ms = duration_s * 1000.0
    times, vals = [], []
    t, level = 0.0, 0
    while t < duration_ms:
        times.append(t)
        vals.append(lo_mbps if level == 0 else hi_mbps)
        level ^= 1
        t += period_ms
    return _build(times, vals, duration_ms, mtu)


def _grid_trace(profile, duration_s, mtu, step_ms=100.0) -> Trace:
    """Sample a capacity profile (a function of time fraction) on a fixed grid."""
    duration_ms = duration_s * 1000.0
    times = np.arange(0.0, duration_ms, step_ms)
    vals = [profile((t % duration_ms) / duration_ms) for t in times]
    return _build(times, vals, duration_ms, mtu)


def ramp_drop_trace(lo_mbps: float, hi_mbps: float, duration_s: float,
                    ramp_fraction: float = 0.8, mtu: int = DEFAULT_MTU) -> Trace:
    """Capacity ramping lo -> hi over the ramp fraction, then dropping to lo."""
    if min(lo_mbps, hi_mbps) <= 0 or duration_s <= 0 or not 0 < ramp_fraction < 1:
        raise ValueError("invalid ramp parameters")

    def profile(frac):
        if frac < ramp_fraction:
            return lo_mbps + (hi_mbps - lo_mbps) * frac / ramp_fraction
        return lo_mbps

    return _grid_trace(profile, duration_s, mtu)


def triangle_trace(lo_mbps: float, hi_mbps: float, duration_s: float,
                   mtu: int = DEFAULT_MTU) -> Trace:
    """Capacity ramping lo -> hi -> lo linearly over the duration."""
    if min(lo_mbps, hi_mbps) <= 0 or duration_s <= 0:
        raise ValueError("capacities and duration must be positive")

    def profile(frac):
        up = 2.0 * frac if frac < 0.5 else 2.0 * (1.0 - frac)
        return lo_mbps + (hi_mbps - lo_mbps) * up

    return _grid_trace(profile, duration_s, mtu)


TRACE_SHAPES = ("constant", "square", "ramp_drop", "triangle")


def generate_trace(shape: str, lo_mbps: float, hi_mbps: float, duration_s: float,
                   period_s: float = 5.0, mtu: int = DEFAULT_MTU) -> Trace:
    if shape == "constant":
        return constant_trace(hi_mbps, duration_s, mtu)
    if shape == "square":
        return square_trace(lo_mbps, hi_mbps, period_s, duration_s, mtu)
    if shape == "ramp_drop":
        return ramp_drop_trace(lo_mbps, hi_mbps, duration_s, mtu=mtu)
    if shape == "triangle":
        return triangle_trace(lo_mbps, hi_mbps, duration_s, mtu=mtu)
    raise ValueError(f"unknown trace shape {shape!r}; expected one of {TRACE_SHAPES}")


def save_trace(path, trace: Trace, mtu: int = DEFAULT_MTU) -> None:
    with open(path, "w") as fh:
        for t, r in zip(trace.times_ms, trace.rates_pps):
            fh.write(f"{float(t)!r} {pps_to_mbps(float(r), mtu)!r}\n")
        last = pps_to_mbps(float(trace.rates_pps[-1]), mtu)
        fh.write(f"{float(trace.duration_ms)!r} {last!r}\n")


def load_trace(path, mtu: int = DEFAULT_MTU) -> Trace:
    times, rates = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            t_str, mbps_str = line.split()
            times.append(float(t_str))
            rates.append(mbps_to_pps(float(mbps_str), mtu))
    if len(times) < 2:
        raise ValueError("trace file needs at least a start sample and an end sentinel")
    duration = times[-1]
    return Trace(times_ms=np.array(times[:-1]), rates_pps=np.array(rates[:-1]),
                 duration_ms=duration)
