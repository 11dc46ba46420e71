"""Local split decisions, link flows and forward mass conservation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MassOverflow, NegativePreference
from .network import E1, E2, E3, E4, E5, Network
from .numerics import SampledFunction, TimeGrid, cumulative_trapezoid, half_step_index, integrate_ode, to_half_steps


@dataclass
class MassTrajectory:
    grid: TimeGrid
    values: np.ndarray  # (5, N+1)

    @classmethod
    def zeros(cls, grid: TimeGrid) -> "MassTrajectory":
        return cls(grid, np.zeros((5, grid.n + 1)))

    def __call__(self, t):
        return np.stack([np.interp(t, self.grid.nodes, self.values[e]) for e in range(5)])

    def max_slope(self) -> float:
        return float(np.max(np.abs(np.diff(self.values, axis=1))) / self.grid.dt)

    def distance(self, other) -> float:
        """Sup-norm distance over links and grid nodes."""
        other = getattr(other, "values", other)
        return float(np.max(np.abs(self.values - other)))

    def violations(self, rho_max: float, lipschitz: float, tol: float = 1e-9) -> list[str]:
        """Reasons this trajectory is outside the admissible set X (empty if inside)."""
        out = []
        v = self.values
        if np.min(v) < -tol:
            out.append(f"negative mass {np.min(v):.3g}")
        if np.max(v) > rho_max + tol:
            out.append(f"mass {np.max(v):.6g} above rho_max {rho_max:g}")
        if self.max_slope() > lipschitz * (1 + tol):
            out.append(f"slope {self.max_slope():.6g} above Lipschitz bound {lipschitz:g}")
        if np.max(np.abs(v[:, 0])) > tol:
            out.append("nonzero initial mass")
        return out


@dataclass
class FlowPolicy:
    """Move speeds and move fractions per link at every grid node.

    The flow of link e at node k is ``weights[e, k] * min(rho_e * speeds[e, k] / l_e, C_e)``;
    a weight strictly between 0 and 1 splits the link's agents between a
    tied stay and move decision.
    """

    speeds: np.ndarray  # (5, N+1)
    weights: np.ndarray  # (5, N+1)


def local_decision(z, network: Network | None = None) -> np.ndarray:
    """Split fractions G_e(z) of each node's outflow; works on (..., 3) arrays."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise NegativePreference(f"path preferences must be >= 0, got {z}")
    # y = A z for the fixed topology
    y1 = z[..., 0] + z[..., 2]
    y2 = z[..., 1]
    y3 = z[..., 2]
    y4 = z[..., 0]
    G = np.empty(z.shape[:-1] + (5,))
    s_o = y1 + y2
    s_v1 = y3 + y4
    with np.errstate(invalid="ignore", divide="ignore"):
        G[..., E1] = np.where(s_o > 0, y1 / np.where(s_o > 0, s_o, 1.0), 0.5)
        G[..., E3] = np.where(s_v1 > 0, y3 / np.where(s_v1 > 0, s_v1, 1.0), 0.5)
    G[..., E2] = 1.0 - G[..., E1]
    G[..., E4] = 1.0 - G[..., E3]
    G[..., E5] = 1.0
    return G


def link_flows(rho_t, decisions, network: Network) -> np.ndarray:
    """f_e = rho_e u_e / l_e clamped to [0, C_e]; stay decisions have u = 0."""
    rho_t = np.asarray(rho_t, dtype=float)
    u = np.array([d.control if d.mode == "move" else 0.0 for d in decisions])
    return np.clip(rho_t * u / network.lengths, 0.0, network.capacities)


def blend_flows(rho_t, speeds, weights, network: Network) -> np.ndarray:
    """Move-fraction weighted flows; a weight of 1 is a pure move, 0 a pure stay."""
    moving = np.clip(np.maximum(rho_t, 0.0) * speeds / network.lengths, 0.0, network.capacities)
    return weights * moving


def mass_rhs(f, z, lam_t: float, network: Network | None = None, G=None) -> np.ndarray:
    """dρ/dt: split inflow at each tail node minus outflow of each link."""
    f = np.asarray(f, dtype=float)
    if G is None:
        G = local_decision(z)
    inflow = np.array([lam_t, lam_t, f[E1], f[E1], f[E2] + f[E3]])
    return G * inflow - f


def evolve_mass(z_traj, policy: FlowPolicy, lam, scenario):
    """Forward RK4 integration of link masses from rho(0) = 0.

    Returns the mass trajectory and the cumulative arrivals at the
    destination, integrated with the trapezoid rule over node flows.
    Raises MassOverflow if any mass exceeds ``scenario.rho_max``.
    """
    grid = scenario.grid
    net = scenario.network
    lam = np.asarray(getattr(lam, "values", lam), dtype=float)
    z = np.asarray(getattr(z_traj, "z", z_traj), dtype=float)
    G_half = local_decision(np.maximum(to_half_steps(z.T).T, 0.0))
    lam_half = to_half_steps(lam)

    rate = (policy.speeds / net.lengths[:, None]).T  # (N+1, 5)
    w = policy.weights.T
    cap = net.capacities
    rho_max = scenario.rho_max

    def rhs(t, rho):
        i = half_step_index(grid, t)
        r = np.maximum(rho, 0.0)
        a, b = i // 2, (i + 1) // 2
        f = w[a] * np.minimum(r * rate[a], cap)
        if a != b:
            f = 0.5 * (f + w[b] * np.minimum(r * rate[b], cap))
        G = G_half[i]
        return G * np.array([lam_half[i], lam_half[i], f[0], f[0], f[1] + f[2]]) - f

    def clamp(k, rho):
        rho = np.maximum(rho, 0.0)
        if np.any(rho > rho_max):
            e = int(np.argmax(rho))
            raise MassOverflow(
                f"mass on e{e + 1} reached {rho[e]:.6g} > rho_max = {rho_max:g} at t = {grid.nodes[k]:g}"
            )
        return rho

    rho = integrate_ode(rhs, np.zeros(5), grid, post_step=clamp).T
    f_nodes = w.T * np.minimum(rho * rate.T, cap[:, None])
    arrivals = cumulative_trapezoid(f_nodes[E4] + f_nodes[E5], grid.dt)
    return MassTrajectory(grid, rho), SampledFunction(grid, arrivals)
