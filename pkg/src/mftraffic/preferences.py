"""Noisy best-response dynamics of the aggregate path preferences z(t)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import TimeGrid, half_step_index, integrate_ode, to_half_steps

log = logging.getLogger(__name__)


def logit_weights(J, beta: float) -> np.ndarray:
    """softmax(-beta * J) along the last axis, shifted by the minimum cost."""
    J = np.asarray(J, dtype=float)
    x = -beta * (J - J.min(axis=-1, keepdims=True))
    w = np.exp(x)
    return w / w.sum(axis=-1, keepdims=True)


def perturbed_best_response(J, lam_t, beta: float) -> np.ndarray:
    return np.asarray(lam_t, dtype=float)[..., None] * logit_weights(J, beta)


def rate_response(J, lam_dot_t, beta: float) -> np.ndarray:
    return np.asarray(lam_dot_t, dtype=float)[..., None] * logit_weights(J, beta)


def project_to_simplex(z, lam_t: float) -> tuple[np.ndarray, bool]:
    """Clamp negatives and rescale so the components sum to ``lam_t``.

    Returns the projected vector and whether the simplex was degenerate
    (lam_t == 0 while a correction was needed).
    """
    z = np.asarray(z, dtype=float)
    if np.all(z >= 0) and z.sum() == lam_t:
        return z, False
    z = np.maximum(z, 0.0)
    total = z.sum()
    if lam_t <= 0:
        return np.zeros_like(z), bool(total > 0)
    if total == 0:
        return np.full_like(z, lam_t / z.size), False
    return z * (lam_t / total), False


@dataclass
class PreferenceTrajectory:
    grid: TimeGrid
    z: np.ndarray  # (N+1, 3)
    degenerate_nodes: list[int] = field(default_factory=list)

    def __call__(self, t):
        return np.stack([np.interp(t, self.grid.nodes, self.z[:, p]) for p in range(3)], axis=-1)


def evolve_preferences(J, lam, lam_dot, z0, eta: float, beta: float, grid: TimeGrid) -> PreferenceTrajectory:
    """RK4 integration of dz/dt = eta (F + Q - z), projected onto S_lambda(t) after each step.

    ``J`` holds path costs at the grid nodes, shape (N+1, 3); ``lam`` and
    ``lam_dot`` are node samples (or SampledFunctions) of the throughput.
    """
    lam = np.asarray(getattr(lam, "values", lam), dtype=float)
    lam_dot = np.asarray(getattr(lam_dot, "values", lam_dot), dtype=float)
    J_half = to_half_steps(np.asarray(J, dtype=float).T).T
    drive = (to_half_steps(lam) + to_half_steps(lam_dot))[:, None] * logit_weights(J_half, beta)

    z0 = np.asarray(z0, dtype=float)
    if np.any(z0 < 0) or abs(z0.sum() - lam[0]) > 1e-12 * max(1.0, lam[0]):
        log.warning("initial preferences %s projected onto the simplex of total %g", z0, lam[0])
    z0, degenerate = project_to_simplex(z0, lam[0])
    degenerate_nodes = [0] if degenerate else []

    def rhs(t, z):
        return eta * (drive[half_step_index(grid, t)] - z)

    def project(k, z):
        z, bad = project_to_simplex(z, lam[k])
        if bad:
            degenerate_nodes.append(k)
        return z

    z = integrate_ode(rhs, z0, grid, post_step=project)
    if degenerate_nodes:
        log.warning("degenerate simplex (lambda = 0) at %d node(s)", len(degenerate_nodes))
    return PreferenceTrajectory(grid, z, degenerate_nodes)
