"""The fixed-point map psi and a damped Picard search for its fixed point.

psi(rho): value functions for the frozen mass rho give the optimal link
decisions; the decisions give path costs, which drive the preference ODE;
preferences and decisions drive mass conservation, whose solution is rho'.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StepTooSmall
from .mass import FlowPolicy, MassTrajectory, evolve_mass
from .numerics import SampledFunction, TimeGrid
from .preferences import PreferenceTrajectory, evolve_preferences
from .values import ValueField, path_costs, value_field, value_lipschitz_bound

log = logging.getLogger(__name__)

STALL_LIMIT = 10
MIN_DAMPING = 1.0 / 64.0


@dataclass(frozen=True)
class Partition:
    """Subinterval boundaries as indices into the base grid (0 and N included)."""

    grid: TimeGrid
    indices: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes[self.indices]

    @classmethod
    def finest(cls, grid: TimeGrid) -> "Partition":
        return cls(grid, np.arange(grid.n + 1))

    def owner(self) -> np.ndarray:
        """For each grid node, the index of the node starting its subinterval."""
        k = np.arange(self.grid.n + 1)
        sub = np.searchsorted(self.indices, k, side="right") - 1
        sub = np.minimum(sub, len(self.indices) - 2)
        owner = self.indices[sub]
        owner[-1] = self.grid.n
        return owner


def epsilon_partition(epsilon: float, scenario) -> Partition:
    """Uniform partition whose step eps / L keeps a decision eps-optimal across each subinterval.

    L bounds the time-Lipschitz constant of the branch objectives. The step is
    shrunk so it divides T into whole subintervals, then snapped to the grid.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    grid = scenario.grid
    L = value_lipschitz_bound(scenario.network, scenario.alpha, scenario.phi_max, grid.horizon)
    step = epsilon / L
    T = grid.horizon
    if step >= T:
        n_sub = 1
    else:
        if step < grid.dt * (1 - 1e-12):
            raise StepTooSmall(
                f"eps / L = {step:.3g} is below the grid step {grid.dt:.3g}; refine the grid "
                f"to at least {math.ceil(T / step)} intervals"
            )
        n_sub = math.ceil(T / step - 1e-9)
    idx = np.unique(np.round(np.arange(n_sub + 1) * grid.n / n_sub).astype(int))
    return Partition(grid, idx)


@dataclass(frozen=True)
class SplitFunction:
    """Stay fraction mu_1 on subintervals where stay and move are tied.

    Outside ties the fraction is 1 (stay optimal) or 0 (move optimal), so
    weight only ever lands on optimal decisions. ``fractions`` optionally
    overrides ``tie_fraction`` per link and subinterval, shape (5, n_sub).
    """

    tie_fraction: float = 0.5
    fractions: np.ndarray | None = None

    def stay_fractions(self, field: ValueField, partition: Partition) -> np.ndarray:
        owner = partition.owner()
        sub = np.minimum(np.searchsorted(partition.indices, owner, side="right") - 1, len(partition.indices) - 2)
        mu1 = np.empty((5, field.grid.n + 1))
        for p in field.policies:
            tied = self.tie_fraction if self.fractions is None else self.fractions[p.link, sub]
            mu1[p.link] = np.where(p.tie[owner], tied, np.where(p.move[owner], 0.0, 1.0))
        return mu1

    def move_weights(self, field: ValueField, partition: Partition) -> np.ndarray:
        return 1.0 - self.stay_fractions(field, partition)


@dataclass
class PsiOutput:
    mass: MassTrajectory
    arrivals: SampledFunction
    field: ValueField
    preferences: PreferenceTrajectory
    path_costs: np.ndarray  # (N+1, 3)
    policy: FlowPolicy


def psi_step(rho, split: SplitFunction, scenario, partition: Partition | None = None) -> PsiOutput:
    grid = scenario.grid
    if partition is None:
        partition = Partition.finest(grid)
    field = value_field(rho, scenario)
    J = path_costs(field, grid.nodes)
    z = evolve_preferences(
        J, scenario.lam, scenario.lam_dot, scenario.initial_preferences(),
        scenario.eta, scenario.beta, grid,
    )
    policy = FlowPolicy(field.speeds, split.move_weights(field, partition))
    mass, arrivals = evolve_mass(z, policy, scenario.lam, scenario)
    return PsiOutput(mass, arrivals, field, z, J, policy)


def apply_psi(rho, split: SplitFunction, scenario, partition: Partition | None = None) -> MassTrajectory:
    return psi_step(rho, split, scenario, partition).mass


@dataclass
class EquilibriumResult:
    mass: MassTrajectory
    image: MassTrajectory  # psi(mass)
    arrivals: SampledFunction
    preferences: PreferenceTrajectory
    field: ValueField
    path_costs: np.ndarray
    residual_history: list[float]
    damping_history: list[float]
    ties: list[tuple[str, int]]
    converged: bool
    status: str = "converged"
    iterations: int = field(init=False)

    def __post_init__(self):
        self.iterations = len(self.residual_history)

    @property
    def residual(self) -> float:
        return self.residual_history[-1]


def find_equilibrium(scenario, cfg=None, split: SplitFunction | None = None) -> EquilibriumResult:
    """Damped Picard iteration rho <- (1 - g) rho + g psi(rho) from rho = 0.

    The first step is undamped. If the residual fails to improve on its best
    value for STALL_LIMIT iterations the damping is halved, down to
    MIN_DAMPING; a further stall ends the search unconverged.
    MassOverflow propagates.
    """
    cfg = scenario.solver if cfg is None else cfg
    split = SplitFunction(cfg.split) if split is None else split
    grid = scenario.grid
    partition = epsilon_partition(cfg.epsilon, scenario) if cfg.epsilon else Partition.finest(grid)

    rho = MassTrajectory.zeros(grid)
    gamma = cfg.damping
    history: list[float] = []
    gammas: list[float] = []
    best, stall = math.inf, 0
    status = "max_iter"
    for it in range(cfg.max_iter):
        out = psi_step(rho, split, scenario, partition)
        evaluated = rho
        r = out.mass.distance(rho)
        history.append(r)
        log.debug("iteration %d residual %.3e damping %.4g", it + 1, r, gamma)
        if r <= cfg.tol:
            status = "converged"
            gammas.append(0.0)
            break
        step = 1.0 if it == 0 else gamma
        gammas.append(step)
        rho = MassTrajectory(grid, (1.0 - step) * rho.values + step * out.mass.values)
        if r < best:
            best, stall = r, 0
            continue
        stall += 1
        if stall >= STALL_LIMIT:
            if gamma <= MIN_DAMPING:
                status = "stalled"
                break
            gamma = max(gamma / 2.0, MIN_DAMPING)
            stall = 0
            log.info("residual stalled; damping reduced to %g", gamma)

    converged = status == "converged"
    if not converged:
        log.warning("equilibrium not converged (%s), residual %.3e", status, history[-1])
    return EquilibriumResult(
        mass=evaluated,
        image=out.mass,
        arrivals=out.arrivals,
        preferences=out.preferences,
        field=out.field,
        path_costs=out.path_costs,
        residual_history=history,
        damping_history=gammas,
        ties=out.field.ties(),
        converged=converged,
        status=status,
    )
