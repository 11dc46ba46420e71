"""Backward value functions, optimal stay/move decisions and path costs.

Links are processed in dependency order e4, e5 -> e3 -> e1, e2, then the
origin value V0 = min(V_e1, V_e2). For an agent at the tail of link e at time
t the two candidate behaviours are

* stay:  alpha * penalty_length(e) + int_t^T phi_e
* move:  inf_{tau in (t, T]} l_e^2 / (2 (tau - t)) + int_t^tau phi_e + W_e(tau)

where W_e is the value downstream of the head of e (zero for e4, e5, whose
move branch arrives exactly at T).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDecision, ValidationError
from .network import E1, E2, E3, E4, E5, LINKS, PATH_LINKS, Network
from .numerics import TimeGrid, _antiderivative, cumulative_trapezoid

GOLDEN_ITERATIONS = 60
N_CANDIDATES = 3
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_ROW_BLOCK = 256


@dataclass(frozen=True)
class CongestionParams:
    """Linear congestion costs phi_e(rho) = alpha_prime_e * rho + alpha_second_e."""

    alpha_prime: np.ndarray
    alpha_second: np.ndarray

    def __post_init__(self):
        for name in ("alpha_prime", "alpha_second"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (5,):
                raise ValidationError(f"{name} needs 5 entries", "congestion_shape")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValidationError(f"{name} must be finite and >= 0", "congestion_nonnegative")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def phi(self, rho: np.ndarray) -> np.ndarray:
        """Congestion cost per link; ``rho`` has links on the first axis."""
        rho = np.asarray(rho, dtype=float)
        shape = (5,) + (1,) * (rho.ndim - 1)
        return self.alpha_prime.reshape(shape) * rho + self.alpha_second.reshape(shape)

    def phi_max(self, rho_max: float) -> float:
        return float(np.max(self.alpha_prime * rho_max + self.alpha_second))


def control_bounds(network: Network, alpha: float, phi_max: float, horizon: float) -> np.ndarray:
    """Upper bound B_e on any optimal move speed.

    A move is only chosen when its kinetic cost l^2 / (2 (tau - t)) does not
    exceed the stay cost, itself at most alpha * penalty + T * phi_max.
    """
    return 2.0 * (alpha * network.penalty_lengths + horizon * phi_max) / network.lengths


def value_lipschitz_bound(network: Network, alpha: float, phi_max: float, horizon: float) -> float:
    """Time-Lipschitz constant of every V^e, independent of the mass trajectory.

    Along the move branch dV/dt = u^2 / 2 - phi, along the stay branch -phi.
    """
    B = control_bounds(network, alpha, phi_max, horizon)
    return float(np.max(0.5 * B**2) + phi_max)


@dataclass(frozen=True)
class LinkDecision:
    mode: str
    value: float
    tau: float | None = None
    control: float | None = None
    tie: bool = False

    def __post_init__(self):
        if self.mode not in ("stay", "move"):
            raise InvalidDecision(f"mode must be 'stay' or 'move', got {self.mode!r}")
        if self.mode == "move" and self.tau is None:
            raise InvalidDecision("a move decision needs an arrival time")

    @classmethod
    def stay(cls, value: float = float("nan"), tie: bool = False):
        return cls("stay", value, tie=tie)

    @classmethod
    def move(cls, t: float, tau: float, length: float, value: float = float("nan"), tie: bool = False):
        if not tau > t:
            raise InvalidDecision(f"arrival {tau} must follow entry {t}")
        return cls("move", value, tau, length / (tau - t), tie)


class CongestionField:
    """phi_e(rho_e(t)) sampled on the grid with exact piecewise-linear integrals."""

    def __init__(self, rho: np.ndarray, params: CongestionParams, grid: TimeGrid):
        self.grid = grid
        self.phi = params.phi(rho)
        self.cumulative = cumulative_trapezoid(self.phi, grid.dt)

    def antiderivative(self, e: int, t):
        return _antiderivative(self.phi[e], self.cumulative[e], self.grid, t)

    def integral(self, e: int, a, b):
        return self.antiderivative(e, b) - self.antiderivative(e, a)


@dataclass
class LinkPolicy:
    """Stay/move branch data for one link at every grid node."""

    link: int
    length: float
    stay_value: np.ndarray
    move_value: np.ndarray  # +inf at t = T
    move_tau: np.ndarray  # nan at t = T
    move: np.ndarray  # chosen decision (ties resolved towards move)
    tie: np.ndarray

    @property
    def value(self) -> np.ndarray:
        return np.minimum(self.stay_value, self.move_value)


@dataclass
class ValueField:
    grid: TimeGrid
    network: Network
    alpha: float
    tie_tol: float
    congestion: CongestionField
    policies: list[LinkPolicy]
    v0: np.ndarray
    first_link: np.ndarray  # 0 for e1, 1 for e2
    v0_tie: np.ndarray
    speeds: np.ndarray = field(init=False)

    def __post_init__(self):
        t = self.grid.nodes
        speeds = np.zeros((5, self.grid.n + 1))
        for p in self.policies:
            dur = p.move_tau[:-1] - t[:-1]
            speeds[p.link, :-1] = p.length / dur
        self.speeds = speeds

    @property
    def values(self) -> np.ndarray:
        return np.stack([p.value for p in self.policies])

    def decision(self, e: int, k: int) -> LinkDecision:
        """Recorded decision of link ``e`` at grid node ``k``."""
        p = self.policies[e]
        t = self.grid.nodes[k]
        value = float(p.value[k])
        if p.move[k]:
            return LinkDecision.move(t, float(p.move_tau[k]), p.length, value, bool(p.tie[k]))
        return LinkDecision.stay(value, bool(p.tie[k]))

    def ties(self) -> list[tuple[str, int]]:
        return [(LINKS[p.link], int(k)) for p in self.policies for k in np.flatnonzero(p.tie)]

    def stay_cost(self, e: int, s):
        s = np.asarray(s, dtype=float)
        T = self.grid.horizon
        return self.alpha * self.network.penalty_lengths[e] + self.congestion.integral(e, s, T)

    def decision_at(self, e: int, s):
        """Decision for entry at arbitrary times ``s`` (vectorised).

        Branch values and arrival times are read by linear interpolation; at
        grid nodes this reproduces the recorded decision exactly.
        """
        s = np.asarray(s, dtype=float)
        p = self.policies[e]
        n = self.grid.n
        T = self.grid.horizon
        k, frac = self.grid.locate(s)
        last = k == n - 1
        k1 = np.minimum(k + 1, n - 1)
        mv = (1 - frac) * p.move_value[k] + frac * p.move_value[k1]
        interior = mv <= self.stay_cost(e, s) + self.tie_tol
        move = np.where(frac == 0, p.move[k], np.where(last, p.move[n - 1], interior))
        move = move & (s < T)
        tau_next = np.where(last, T, p.move_tau[k1])
        tau = (1 - frac) * p.move_tau[k] + frac * tau_next
        return move, np.where(move, tau, np.nan)


# -- per-link closed forms ---------------------------------------------------


def link_cost(e: int, t: float, decision: LinkDecision, rho, scenario, params: CongestionParams | None = None) -> float:
    """Cost incurred on link ``e`` entered at ``t`` under ``decision``."""
    params = scenario.congestion if params is None else params
    grid = scenario.grid
    T = grid.horizon
    if not (0.0 <= t <= T):
        raise InvalidDecision(f"entry time {t} outside [0, {T}]")
    rho = np.asarray(getattr(rho, "values", rho), dtype=float)
    cong = CongestionField(rho, params, grid)
    if decision.mode == "stay":
        return float(scenario.alpha * scenario.network.penalty_lengths[e] + cong.integral(e, t, T))
    tau = decision.tau
    if tau is None or not (t < tau <= T + 1e-12 * T):
        raise InvalidDecision(f"arrival {tau} must lie in ({t}, {T}]")
    tau = min(tau, T)
    ell = scenario.network.lengths[e]
    return float(0.5 * ell**2 / (tau - t) + cong.integral(e, t, tau))


def _golden_minimize(g, a: np.ndarray, b: np.ndarray, iterations: int = GOLDEN_ITERATIONS):
    """Vectorised golden-section search of g on the open intervals (a, b)."""
    a = a.copy()
    b = b.copy()
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = g(c), g(d)
    for _ in range(iterations):
        left = fc < fd
        a = np.where(left, a, c)
        b = np.where(left, d, b)
        new_c = np.where(left, b - _INV_PHI * (b - a), d)
        new_d = np.where(left, c, a + _INV_PHI * (b - a))
        x = np.where(left, new_c, new_d)
        fx = g(x)
        fc, fd = np.where(left, fx, fd), np.where(left, fc, fx)
        c, d = new_c, new_d
    best_left = fc <= fd
    return np.where(best_left, c, d), np.where(best_left, fc, fd)


def _move_branch(ell: float, e: int, cong: CongestionField, downstream: list[np.ndarray], grid: TimeGrid):
    """Infimum over tau in (t, T] of the move objective at every node t < T.

    A grid scan locates the best discrete local minima, then golden-section
    search refines inside the two cells adjacent to each of them.
    """
    n = grid.n
    t = grid.nodes
    half_l2 = 0.5 * ell * ell
    cum = cong.cumulative[e]
    w_nodes = np.min(np.stack(downstream), axis=0)

    def w_at(tau):
        return np.min(np.stack([np.interp(tau, t, w) for w in downstream]), axis=0)

    base = cum + w_nodes
    cands = np.full((n, N_CANDIDATES), -1, dtype=int)
    cand_vals = np.full((n, N_CANDIDATES), np.inf)
    for r0 in range(0, n, _ROW_BLOCK):
        rows = np.arange(r0, min(r0 + _ROW_BLOCK, n))
        dur = t[None, :] - t[rows, None]
        with np.errstate(divide="ignore"):
            obj = half_l2 / dur + base[None, :] - cum[rows, None]
        obj[dur <= 0] = np.inf
        inf_col = np.full((len(rows), 1), np.inf)
        left = np.hstack([inf_col, obj[:, :-1]])
        right = np.hstack([obj[:, 1:], inf_col])
        score = np.where((obj <= left) & (obj <= right) & np.isfinite(obj), obj, np.inf)
        m = min(N_CANDIDATES, score.shape[1])
        part = np.argpartition(score, m - 1, axis=1)[:, :m]
        pv = np.take_along_axis(score, part, axis=1)
        order = np.argsort(pv, axis=1, kind="stable")
        part = np.take_along_axis(part, order, axis=1)
        pv = np.take_along_axis(pv, order, axis=1)
        cands[rows, :m] = np.where(np.isfinite(pv), part, -1)
        cand_vals[rows, :m] = pv

    best_val = cand_vals[:, 0].copy()
    best_tau = np.where(cands[:, 0] >= 0, t[np.maximum(cands[:, 0], 0)], np.nan)

    # refinement problems: (row, lower, upper)
    rows_idx, lo, hi = [], [], []
    for c in range(N_CANDIDATES):
        valid = cands[:, c] >= 0
        r = np.flatnonzero(valid)
        j = cands[r, c]
        has_left = j - 1 >= r
        rows_idx.append(r[has_left])
        lo.append(np.maximum(t[j[has_left] - 1], t[r[has_left]]))
        hi.append(t[j[has_left]])
        has_right = j < n
        rows_idx.append(r[has_right])
        lo.append(t[j[has_right]])
        hi.append(t[np.minimum(j[has_right] + 1, n)])
    rows_idx = np.concatenate(rows_idx)
    lo = np.concatenate(lo)
    hi = np.concatenate(hi)
    t_row = t[rows_idx]
    cum_row = cum[rows_idx]

    def g(tau):
        return half_l2 / (tau - t_row) + cong.antiderivative(e, tau) - cum_row + w_at(tau)

    x, fx = _golden_minimize(g, lo, hi)
    order = np.lexsort((fx, rows_idx))
    first = np.ones(len(order), dtype=bool)
    first[1:] = rows_idx[order][1:] != rows_idx[order][:-1]
    sel = order[first]
    r = rows_idx[sel]
    better = fx[sel] < best_val[r]
    best_val[r[better]] = fx[sel][better]
    best_tau[r[better]] = x[sel][better]

    move_value = np.append(best_val, np.inf)
    move_tau = np.append(best_tau, np.nan)
    return move_value, move_tau


def _terminal_branch(ell: float, e: int, cong: CongestionField, grid: TimeGrid):
    t = grid.nodes
    T = grid.horizon
    cum = cong.cumulative[e]
    move_value = np.full(grid.n + 1, np.inf)
    move_value[:-1] = 0.5 * ell * ell / (T - t[:-1]) + (cum[-1] - cum[:-1])
    move_tau = np.full(grid.n + 1, np.nan)
    move_tau[:-1] = T
    return move_value, move_tau


def _decide(e: int, ell: float, stay_value, move_value, move_tau, tie_tol: float) -> LinkPolicy:
    with np.errstate(invalid="ignore"):
        gap = move_value - stay_value
    move = gap <= tie_tol
    tie = np.abs(gap) <= tie_tol
    return LinkPolicy(e, float(ell), stay_value, move_value, move_tau, move, tie)


def value_field(rho, scenario, params: CongestionParams | None = None) -> ValueField:
    """Value functions and optimal decisions for a frozen mass trajectory."""
    params = scenario.congestion if params is None else params
    grid = scenario.grid
    net = scenario.network
    alpha = scenario.alpha
    tie_tol = scenario.solver.tie_tol
    rho = np.asarray(getattr(rho, "values", rho), dtype=float)
    cong = CongestionField(rho, params, grid)
    ell = net.lengths
    stay = alpha * net.penalty_lengths[:, None] + (cong.cumulative[:, -1:] - cong.cumulative)

    policies: list[LinkPolicy | None] = [None] * 5
    for e in (E4, E5):
        mv, tau = _terminal_branch(ell[e], e, cong, grid)
        policies[e] = _decide(e, ell[e], stay[e], mv, tau, tie_tol)

    mv, tau = _move_branch(ell[E3], E3, cong, [policies[E5].value], grid)
    policies[E3] = _decide(E3, ell[E3], stay[E3], mv, tau, tie_tol)

    mv, tau = _move_branch(ell[E1], E1, cong, [policies[E3].value, policies[E4].value], grid)
    policies[E1] = _decide(E1, ell[E1], stay[E1], mv, tau, tie_tol)

    mv, tau = _move_branch(ell[E2], E2, cong, [policies[E5].value], grid)
    policies[E2] = _decide(E2, ell[E2], stay[E2], mv, tau, tie_tol)

    v1, v2 = policies[E1].value, policies[E2].value
    v0 = np.minimum(v1, v2)
    first = np.where(v1 <= v2 + tie_tol, 0, 1)
    v0_tie = np.abs(v1 - v2) <= tie_tol
    return ValueField(grid, net, alpha, tie_tol, cong, policies, v0, first, v0_tie)


def path_costs(field: ValueField, times) -> np.ndarray:
    """Expected cost of each path for agents entering the origin at ``times``.

    Entry times compose the recorded arrival times along the path; after a
    stay decision the remaining links of the path contribute nothing.
    Returns an array of shape (len(times), 3).
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    T = field.grid.horizon
    times = np.clip(times, 0.0, T)
    cong = field.congestion
    out = np.zeros((len(times), 3))
    for p, links in enumerate(PATH_LINKS):
        s = times.copy()
        alive = np.ones(len(times), dtype=bool)
        for e in links:
            move, tau = field.decision_at(e, s)
            tau_safe = np.where(move, tau, T)
            dur = np.where(move, tau_safe - s, 1.0)
            ell = field.network.lengths[e]
            move_cost = 0.5 * ell * ell / dur + cong.integral(e, s, tau_safe)
            stay_cost = field.stay_cost(e, s)
            out[:, p] += np.where(alive, np.where(move, move_cost, stay_cost), 0.0)
            alive &= move
            s = np.where(move, np.minimum(tau_safe, T), s)
    return out


def path_cost_vector(t: float, field: ValueField) -> np.ndarray:
    """Path costs J = (J_p1, J_p2, J_p3) for entry at the origin at time ``t``."""
    return path_costs(field, [t])[0]
