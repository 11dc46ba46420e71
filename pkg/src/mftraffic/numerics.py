"""Time grids, sampled functions, throughput families, quadrature and RK4.

Every trajectory in the package lives on one uniform :class:`TimeGrid`;
between nodes a sampled function is read by linear interpolation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np

from .errors import (
    NegativeThroughput,
    NonFiniteState,
    OutOfRange,
    RateViolation,
    ValidationError,
)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k*T/N, k = 0..N."""

    horizon: float
    n: int

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValidationError(f"horizon must be positive, got {self.horizon}", "grid")
        if int(self.n) != self.n or self.n < 2:
            raise ValidationError(f"grid needs N >= 2 intervals, got {self.n}", "grid")

    @property
    def dt(self) -> float:
        return self.horizon / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.linspace(0.0, self.horizon, self.n + 1)
        t.flags.writeable = False
        return t

    @cached_property
    def half_nodes(self) -> np.ndarray:
        """Nodes and cell midpoints interleaved (2N+1 points)."""
        t = np.linspace(0.0, self.horizon, 2 * self.n + 1)
        t.flags.writeable = False
        return t

    def cell_index(self, t):
        """Index k of the cell [t_k, t_{k+1}] holding t (last cell for t = T)."""
        return self.locate(t)[0]

    def locate(self, t):
        """Cell index and fractional position; times within 1e-9 cells of a node snap to it."""
        x = np.asarray(t, dtype=float) / self.dt
        r = np.round(x)
        x = np.where(np.abs(x - r) < 1e-9, r, x)
        k = np.clip(np.floor(x).astype(int), 0, self.n - 1)
        return k, x - k


def to_half_steps(values: np.ndarray) -> np.ndarray:
    """Linear interpolation of node samples onto nodes + midpoints (last axis)."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1] - 1
    out = np.empty(values.shape[:-1] + (2 * n + 1,))
    out[..., 0::2] = values
    out[..., 1::2] = 0.5 * (values[..., :-1] + values[..., 1:])
    return out


@dataclass(frozen=True)
class SampledFunction:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n + 1,):
            raise ValueError(f"expected {self.grid.n + 1} samples, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        return np.interp(t, self.grid.nodes, self.values)

    @cached_property
    def cumulative(self) -> np.ndarray:
        """Trapezoid integral from 0 to each node."""
        return cumulative_trapezoid(self.values, self.grid.dt)

    def antiderivative(self, t):
        """Exact integral from 0 to t of the piecewise-linear interpolant."""
        return _antiderivative(self.values, self.cumulative, self.grid, t)


def cumulative_trapezoid(values: np.ndarray, dt: float) -> np.ndarray:
    """Composite trapezoid integral from t_0 to every node, along the last axis."""
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(values)
    np.cumsum(0.5 * dt * (values[..., 1:] + values[..., :-1]), axis=-1, out=out[..., 1:])
    return out


def _antiderivative(values, cumulative, grid: TimeGrid, t):
    t = np.asarray(t, dtype=float)
    k, frac = grid.locate(t)
    ft = (1.0 - frac) * values[k] + frac * values[k + 1]
    return cumulative[k] + 0.5 * frac * grid.dt * (values[k] + ft)


def integrate_trapezoid(f: SampledFunction, a: float, b: float) -> float:
    """Integral of the interpolated ``f`` over [a, b]; a, b need not be nodes."""
    T = f.grid.horizon
    tol = 1e-12 * T
    if not (-tol <= a <= b <= T + tol):
        raise OutOfRange(f"[{a}, {b}] is not inside [0, {T}]")
    if a == b:
        return 0.0
    a, b = min(max(a, 0.0), T), min(max(b, 0.0), T)
    return float(f.antiderivative(b) - f.antiderivative(a))


# -- throughput families ---------------------------------------------------


@dataclass(frozen=True)
class ConstantThroughput:
    level: float

    def rate(self, t, horizon):
        return np.full_like(np.asarray(t, dtype=float), self.level)

    def derivative(self, t, horizon):
        return np.zeros_like(np.asarray(t, dtype=float))


@dataclass(frozen=True)
class BumpThroughput:
    """Raised cosine of height ``peak`` on [start, end], zero outside."""

    peak: float
    start: float
    end: float

    def __post_init__(self):
        if not self.end > self.start:
            raise ValidationError("bump needs end > start", "throughput_family")

    def _phase(self, t):
        t = np.asarray(t, dtype=float)
        w = self.end - self.start
        inside = (t >= self.start) & (t <= self.end)
        return 2.0 * np.pi * (t - self.start) / w, inside

    def rate(self, t, horizon):
        x, inside = self._phase(t)
        return np.where(inside, 0.5 * self.peak * (1.0 - np.cos(x)), 0.0)

    def derivative(self, t, horizon):
        x, inside = self._phase(t)
        k = 2.0 * np.pi / (self.end - self.start)
        return np.where(inside, 0.5 * self.peak * k * np.sin(x), 0.0)


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _smoothstep_slope(x):
    x = np.clip(x, 0.0, 1.0)
    return 6.0 * x * (1.0 - x)


@dataclass(frozen=True)
class SmoothTrapezoidThroughput:
    """Plateau ``level`` with smoothstep ramps of width ``ramp`` at 0 and T."""

    level: float
    ramp: float

    def __post_init__(self):
        if not self.ramp > 0:
            raise ValidationError("trapezoid ramp must be positive", "throughput_family")

    def rate(self, t, horizon):
        t = np.asarray(t, dtype=float)
        up = _smoothstep(t / self.ramp)
        down = _smoothstep((horizon - t) / self.ramp)
        return self.level * np.minimum(up, down)

    def derivative(self, t, horizon):
        t = np.asarray(t, dtype=float)
        xu, xd = t / self.ramp, (horizon - t) / self.ramp
        up = _smoothstep(xu)
        down = _smoothstep(xd)
        d_up = _smoothstep_slope(xu) / self.ramp
        d_down = -_smoothstep_slope(xd) / self.ramp
        return self.level * np.where(up <= down, d_up, d_down)


ThroughputSpec = Union[ConstantThroughput, BumpThroughput, SmoothTrapezoidThroughput]


def throughput_from_dict(doc: dict) -> ThroughputSpec:
    kinds = {
        "constant": (ConstantThroughput, ("level",)),
        "bump": (BumpThroughput, ("peak", "start", "end")),
        "trapezoid_smooth": (SmoothTrapezoidThroughput, ("level", "ramp")),
    }
    kind = doc.get("kind")
    if kind not in kinds:
        raise ValidationError(f"unknown throughput kind {kind!r}", "throughput_family")
    cls, keys = kinds[kind]
    return cls(**{k: float(doc[k]) for k in keys})


def throughput_to_dict(spec: ThroughputSpec) -> dict:
    if isinstance(spec, ConstantThroughput):
        return {"kind": "constant", "level": spec.level}
    if isinstance(spec, BumpThroughput):
        return {"kind": "bump", "peak": spec.peak, "start": spec.start, "end": spec.end}
    return {"kind": "trapezoid_smooth", "level": spec.level, "ramp": spec.ramp}


def sample_throughput(spec: ThroughputSpec, grid: TimeGrid):
    """Sample lambda and its analytic derivative on ``grid``.

    Raises NegativeThroughput if lambda < 0 at a node and RateViolation if
    lambda + dlambda/dt < 0 at a node.
    """
    t = grid.nodes
    lam = np.asarray(spec.rate(t, grid.horizon), dtype=float)
    lam_dot = np.asarray(spec.derivative(t, grid.horizon), dtype=float)
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(lam_dot))):
        raise NegativeThroughput("throughput is not finite")
    if np.any(lam < 0):
        k = int(np.argmax(lam < 0))
        raise NegativeThroughput(f"lambda({t[k]:g}) = {lam[k]:g} < 0")
    slack = lam + lam_dot
    floor = -1e-12 * max(1.0, float(lam.max()))
    if np.any(slack < floor):
        k = int(np.argmax(slack < floor))
        raise RateViolation(
            f"lambda + dlambda/dt = {slack[k]:.6g} < 0 at t = {t[k]:g}"
        )
    return SampledFunction(grid, lam), SampledFunction(grid, lam_dot)


# -- ODE stepping ----------------------------------------------------------

Rhs = Callable[[float, np.ndarray], np.ndarray]


def integrate_ode(
    rhs: Rhs,
    y0,
    grid: TimeGrid,
    post_step: Callable[[int, np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Classical RK4 over ``grid``; returns states of shape (N+1, dim).

    ``post_step(k, y)`` may replace the state reached at node k (projection,
    clamping). Raises NonFiniteState as soon as a state is not finite.
    """
    y = np.array(y0, dtype=float)
    out = np.empty((grid.n + 1,) + y.shape)
    out[0] = y
    h = grid.dt
    t = grid.nodes
    for k in range(grid.n):
        tk = t[k]
        k1 = rhs(tk, y)
        k2 = rhs(tk + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(tk + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t[k + 1], y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(f"non-finite state at t = {t[k + 1]:g}")
        if post_step is not None:
            y = post_step(k + 1, y)
        out[k + 1] = y
    return out


def half_step_index(grid: TimeGrid, t: float) -> int:
    """Index into :attr:`TimeGrid.half_nodes` for an RK4 stage time."""
    return int(round(2.0 * t / grid.dt))
