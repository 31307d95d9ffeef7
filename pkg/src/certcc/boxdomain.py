"""Axis-aligned box abstract domain with sound lifted operations.

A box over R^m is stored as a center vector and a non-negative deviation
vector; dimension i concretizes to the closed interval
[center[i] - deviation[i], center[i] + deviation[i]]. Every operation
returns a fresh value and instances are immutable, so boxes are safe to
share between threads.

All arithmetic is IEEE float64 without directed rounding, so containment
guarantees hold only up to the last ulp. Callers that need a hard
guarantee must add their own outward margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Interval",
    "BoxState",
    "from_interval_vector",
    "concretize",
    "affine",
    "add_elements",
    "relu",
    "monotone_elementwise",
    "split",
    "hull",
    "sample",
]


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi] on the real line."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        lo, hi = float(self.lo), float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("interval endpoints must not be NaN")
        if lo > hi:
            raise ValueError(f"invalid interval: lo={lo} > hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def encloses(self, other: "Interval") -> bool:
        """True iff `other` is a subset of this interval."""
        return self.lo <= other.lo and other.hi <= self.hi

    def shift(self, delta: float) -> "Interval":
        return Interval(self.lo + delta, self.hi + delta)

    def scale(self, factor: float) -> "Interval":
        if factor >= 0:
            return Interval(self.lo * factor, self.hi * factor)
        return Interval(self.hi * factor, self.lo * factor)


@dataclass(frozen=True)
class BoxState:
    """Box abstract value: a center vector and non-negative deviations."""

    center: np.ndarray
    deviation: np.ndarray

    def __post_init__(self) -> None:
        c = np.array(self.center, dtype=np.float64, copy=True).reshape(-1)
        e = np.array(self.deviation, dtype=np.float64, copy=True).reshape(-1)
        if c.size == 0:
            raise ValueError("zero-dimension box")
        if c.shape != e.shape:
            raise ValueError(f"center/deviation shape mismatch: {c.shape} vs {e.shape}")
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(e)):
            raise ValueError("box components must be finite")
        if np.any(e < 0):
            raise ValueError("deviations must be non-negative")
        c.flags.writeable = False
        e.flags.writeable = False
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "deviation", e)

    @property
    def m(self) -> int:
        return self.center.size

    def lower(self) -> np.ndarray:
        return self.center - self.deviation

    def upper(self) -> np.ndarray:
        return self.center + self.deviation

    def interval(self, dim: int) -> Interval:
        return Interval(self.center[dim] - self.deviation[dim],
                        self.center[dim] + self.deviation[dim])


def from_interval_vector(intervals: Sequence[Interval]) -> BoxState:
    """Minimal box whose dimension i concretizes to intervals[i]."""
    if len(intervals) == 0:
        raise ValueError("zero-dimension box")
    lo = np.array([iv.lo for iv in intervals], dtype=np.float64)
    hi = np.array([iv.hi for iv in intervals], dtype=np.float64)
    return BoxState(center=0.5 * (lo + hi), deviation=0.5 * (hi - lo))


def concretize(box: BoxState) -> list[Interval]:
    """Per-dimension concretization intervals of a box."""
    lo, hi = box.lower(), box.upper()
    return [Interval(lo[i], hi[i]) for i in range(box.m)]


def affine(box: BoxState, matrix: np.ndarray, bias: np.ndarray | None = None) -> BoxState:
    """Lift x -> M x + b: center maps through M and b, deviations through |M|."""
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim != 2 or M.shape[1] != box.m:
        raise ValueError(f"matrix shape {M.shape} does not accept dimension {box.m}")
    c = M @ box.center
    if bias is not None:
        b = np.asarray(bias, dtype=np.float64).reshape(-1)
        if b.shape != c.shape:
            raise ValueError(f"bias shape {b.shape} does not match output dimension {c.shape}")
        c = c + b
    e = np.abs(M) @ box.deviation
    return BoxState(center=c, deviation=e)


def add_elements(box: BoxState, i: int, j: int, k: int) -> BoxState:
    """Lift the map that replaces element i with the sum of elements j and k.

    The selection matrix is non-negative, so it applies to the deviations
    unchanged (no absolute value needed).
    """
    m = box.m
    for idx in (i, j, k):
        if not 0 <= idx < m:
            raise IndexError(f"index {idx} out of range for dimension {m}")
    M = np.eye(m)
    M[i, :] = 0.0
    M[i, j] += 1.0
    M[i, k] += 1.0
    return BoxState(center=M @ box.center, deviation=M @ box.deviation)


def relu(box: BoxState) -> BoxState:
    """Element-wise ReLU: exact on boxes via the endpoint images."""
    up = np.maximum(box.center + box.deviation, 0.0)
    dn = np.maximum(box.center - box.deviation, 0.0)
    return BoxState(center=0.5 * (up + dn), deviation=0.5 * (up - dn))


def monotone_elementwise(box: BoxState, f: Callable[[np.ndarray], np.ndarray]) -> BoxState:
    """Lift a non-decreasing scalar function applied element-wise.

    Exact per dimension: the output interval is [f(lo), f(hi)]. The caller
    guarantees monotonicity on every concretized interval.
    """
    lo = np.asarray(f(box.lower()), dtype=np.float64)
    hi = np.asarray(f(box.upper()), dtype=np.float64)
    return BoxState(center=0.5 * (lo + hi), deviation=0.5 * (hi - lo))


def split(box: BoxState, dim: int, n: int) -> list[BoxState]:
    """Partition dimension `dim` into n equal slices; other dims unchanged.

    The slices share endpoints, their union concretizes to the input box,
    and the outermost edges equal the input bounds exactly.
    """
    if n < 1:
        raise ValueError("component count must be >= 1")
    if not 0 <= dim < box.m:
        raise IndexError(f"dimension {dim} out of range for dimension {box.m}")
    lo = box.center[dim] - box.deviation[dim]
    hi = box.center[dim] + box.deviation[dim]
    t = np.arange(n + 1, dtype=np.float64) / n
    edges = lo * (1.0 - t) + hi * t
    # convex-combination edges can jitter by an ulp; force monotonicity
    edges = np.maximum.accumulate(edges)
    pieces = []
    for i in range(n):
        c = box.center.copy()
        e = box.deviation.copy()
        c[dim] = 0.5 * (edges[i] + edges[i + 1])
        e[dim] = 0.5 * (edges[i + 1] - edges[i])
        pieces.append(BoxState(center=c, deviation=e))
    return pieces


def hull(boxes: Sequence[BoxState]) -> BoxState:
    """Smallest box enclosing all inputs (per-dimension min/max join)."""
    if len(boxes) == 0:
        raise ValueError("hull of empty sequence")
    first = boxes[0]
    if len(boxes) == 1:
        return first
    m = first.m
    for b in boxes[1:]:
        if b.m != m:
            raise ValueError("hull over boxes of different dimensions")
    centers = np.stack([b.center for b in boxes])
    devs = np.stack([b.deviation for b in boxes])
    lo = (centers - devs).min(axis=0)
    hi = (centers + devs).max(axis=0)
    c = 0.5 * (lo + hi)
    e = 0.5 * (hi - lo)
    # where every input agrees, keep the shared representation bit-exactly
    same = np.logical_and((centers == centers[0]).all(axis=0),
                          (devs == devs[0]).all(axis=0))
    c = np.where(same, centers[0], c)
    e = np.where(same, devs[0], e)
    return BoxState(center=c, deviation=e)


def sample(box: BoxState, n: int, rng: np.random.Generator) -> np.ndarray:
    """n concrete points drawn uniformly from the box, shape (n, m)."""
    u = rng.uniform(-1.0, 1.0, size=(n, box.m))
    return box.center + u * box.deviation
