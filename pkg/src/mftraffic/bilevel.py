"""Outer search over linear congestion parameters (alpha', alpha'').

A controller picks phi_e(rho) = alpha'_e rho + alpha''_e from a box K so
that the induced equilibrium mass is as close as possible, in sup norm, to a
reference trajectory. Only derivative-free methods are offered: the
objective has kinks wherever a tie or a clamp switches.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import EquilibriumResult, find_equilibrium
from .errors import MassOverflow, NoConvergedCandidate, SchemaError, ValidationError

log = logging.getLogger(__name__)

METHODS = ("pattern", "grid")

# The inner problem may have several equilibria; only the one reached by the
# deterministic solver from rho = 0 is scored.
SUP_OVER_EQUILIBRIA = "single deterministic equilibrium (no enumeration of the equilibrium set)"


@dataclass(frozen=True)
class ParamBox:
    """Compact box K for (alpha', alpha''); each bound is a 5-vector."""

    lower_prime: np.ndarray
    upper_prime: np.ndarray
    lower_second: np.ndarray
    upper_second: np.ndarray

    def __post_init__(self):
        for name in ("lower_prime", "upper_prime", "lower_second", "upper_second"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (5,) or not np.all(np.isfinite(v)):
                raise ValidationError(f"param box {name} must be 5 finite numbers", "param_box")
            if np.any(v < 0):
                raise ValidationError(f"param box {name} must be >= 0", "param_box")
            object.__setattr__(self, name, v)
        if np.any(self.lower_prime > self.upper_prime) or np.any(self.lower_second > self.upper_second):
            raise ValidationError("param box needs lower <= upper componentwise", "param_box")

    @property
    def lower(self) -> np.ndarray:
        return np.concatenate([self.lower_prime, self.lower_second])

    @property
    def upper(self) -> np.ndarray:
        return np.concatenate([self.upper_prime, self.upper_second])

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def free(self) -> np.ndarray:
        """Indices (0..9) of the coordinates with a nonzero width."""
        return np.flatnonzero(self.upper > self.lower)

    def project(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    @classmethod
    def from_dict(cls, doc: dict) -> "ParamBox":
        keys = {"alpha_prime", "alpha_second"}
        if not isinstance(doc, dict) or set(doc) != keys:
            raise SchemaError("param box must have exactly the keys alpha_prime and alpha_second")
        out = {}
        for name, suffix in (("alpha_prime", "prime"), ("alpha_second", "second")):
            part = doc[name]
            if not isinstance(part, dict) or set(part) != {"lower", "upper"}:
                raise SchemaError(f"param box {name} must have exactly the keys lower and upper")
            out[f"lower_{suffix}"] = part["lower"]
            out[f"upper_{suffix}"] = part["upper"]
        return cls(**out)

    def to_dict(self) -> dict:
        return {
            "alpha_prime": {"lower": self.lower_prime.tolist(), "upper": self.upper_prime.tolist()},
            "alpha_second": {"lower": self.lower_second.tolist(), "upper": self.upper_second.tolist()},
        }


@dataclass
class Candidate:
    alpha_prime: np.ndarray
    alpha_second: np.ndarray
    objective: float
    converged: bool
    best_so_far: float

    def to_dict(self) -> dict:
        return {
            "alpha_prime": self.alpha_prime.tolist(),
            "alpha_second": self.alpha_second.tolist(),
            "objective": self.objective if math.isfinite(self.objective) else None,
            "converged": self.converged,
            "best_so_far": self.best_so_far if math.isfinite(self.best_so_far) else None,
        }


@dataclass
class BilevelResult:
    alpha_prime: np.ndarray
    alpha_second: np.ndarray
    objective: float
    log: list[Candidate]
    method: str
    equilibrium: EquilibriumResult | None = field(default=None, repr=False)
    metadata: dict = field(default_factory=lambda: {"inner_sup": SUP_OVER_EQUILIBRIA})

    @property
    def evaluations(self) -> int:
        return len(self.log)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "best": {"alpha_prime": self.alpha_prime.tolist(), "alpha_second": self.alpha_second.tolist()},
            "objective": self.objective,
            "evaluations": self.evaluations,
            "metadata": self.metadata,
            "log": [c.to_dict() for c in self.log],
        }


def _reference_values(reference, scenario) -> np.ndarray:
    ref = np.asarray(getattr(reference, "values", reference), dtype=float)
    want = (5, scenario.grid.n + 1)
    if ref.shape != want:
        raise ValidationError(f"reference trajectory has shape {ref.shape}, expected {want}", "reference")
    return ref


def _solve(x, reference, scenario, cfg):
    """Objective, converged flag and equilibrium (None on overflow) at the 10-vector x."""
    sc = scenario.with_congestion(x[:5], x[5:])
    try:
        res = find_equilibrium(sc, cfg)
    except MassOverflow as exc:
        log.info("candidate %s overflowed: %s", x, exc)
        return math.inf, False, None
    return res.mass.distance(reference), res.converged, res


def bilevel_objective(alpha_prime, alpha_second, reference, scenario, cfg=None) -> tuple[float, bool]:
    """Sup-norm distance between the equilibrium at (alpha', alpha'') and ``reference``.

    A mass overflow in the inner solve yields (inf, False).
    """
    ref = _reference_values(reference, scenario)
    x = np.concatenate([np.asarray(alpha_prime, float), np.asarray(alpha_second, float)])
    obj, ok, _ = _solve(x, ref, scenario, cfg)
    return obj, ok


class _Evaluator:
    """Budgeted, cached objective with a running log of distinct candidates."""

    def __init__(self, box, reference, scenario, cfg, budget):
        self.box = box
        self.ref = reference
        self.scenario = scenario
        self.cfg = cfg
        self.budget = budget
        self.cache: dict[bytes, tuple[float, bool]] = {}
        self.log: list[Candidate] = []
        self.best = math.inf
        self.best_x: np.ndarray | None = None
        self.best_res = None

    @property
    def exhausted(self) -> bool:
        return len(self.log) >= self.budget

    def __call__(self, x) -> float:
        """Objective at x for ranking: +inf when unconverged or over budget."""
        x = self.box.project(x)
        key = x.tobytes()
        if key in self.cache:
            obj, ok = self.cache[key]
            return obj if ok else math.inf
        if self.exhausted:
            return math.inf
        obj, ok, res = _solve(x, self.ref, self.scenario, self.cfg)
        self.cache[key] = (obj, ok)
        if ok and obj < self.best:
            self.best, self.best_x, self.best_res = obj, x.copy(), res
        self.log.append(Candidate(x[:5].copy(), x[5:].copy(), obj, ok, self.best))
        log.debug("candidate %d objective %.4g converged %s", len(self.log), obj, ok)
        return obj if ok else math.inf


def _poll_directions(free: np.ndarray, dim: int) -> np.ndarray:
    """+-e_i for each free coordinate, then +-e_i +-e_j for each free pair.

    The pairwise diagonals let the search follow valleys that run obliquely
    to the axes, where a coordinate-only poll stalls at a kink.
    """
    dirs = []
    for i in free:
        for s in (1.0, -1.0):
            d = np.zeros(dim)
            d[i] = s
            dirs.append(d)
    for a, b in itertools.combinations(free, 2):
        for sa, sb in ((1, 1), (-1, -1), (1, -1), (-1, 1)):
            d = np.zeros(dim)
            d[a], d[b] = sa, sb
            dirs.append(d)
    return np.array(dirs)


def _pattern_search(ev: _Evaluator, box: ParamBox, min_rel_step: float):
    free = box.free()
    width = box.upper - box.lower
    dirs = _poll_directions(free, width.size)
    x = box.center
    fx = ev(x)
    step = width / 4.0
    while not ev.exhausted and np.any(step[free] > min_rel_step * width[free]):
        improved = False
        for d in dirs:
            y = box.project(x + d * step)
            if np.array_equal(y, x):
                continue
            fy = ev(y)
            if fy < fx:
                x, fx, improved = y, fy, True
                break
            if ev.exhausted:
                return
        if not improved:
            step = step / 2.0


def _grid_search(ev: _Evaluator, box: ParamBox):
    free = box.free()
    if free.size == 0:
        ev(box.center)
        return
    r = max(1, int(math.floor(ev.budget ** (1.0 / free.size) + 1e-9)))
    axes = [np.linspace(box.lower[d], box.upper[d], r) if r > 1 else np.array([box.center[d]]) for d in free]
    for point in np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, free.size):
        x = box.center
        x[free] = point
        ev(x)


def optimize_params(box: ParamBox, reference, scenario, budget: int = 200, method: str = "pattern",
                    cfg=None, min_rel_step: float = 1e-4) -> BilevelResult:
    """Search K for the parameters whose equilibrium best matches ``reference``.

    ``budget`` caps the number of distinct inner equilibrium solves.
    ``pattern`` is a pattern search from the box center: poll the coordinate
    and pairwise-diagonal directions scaled by the step, move on the first
    improvement, halve the step after a failed poll, and stop once every step
    is below ``min_rel_step`` times its width.
    ``grid`` evaluates floor(budget ** (1/d)) points per free coordinate.
    """
    if int(budget) != budget or budget < 1:
        raise ValidationError(f"budget must be a positive integer, got {budget}", "budget")
    if method not in METHODS:
        raise ValidationError(f"method must be one of {METHODS}, got {method!r}", "method")
    ref = _reference_values(reference, scenario)
    ev = _Evaluator(box, ref, scenario, cfg, int(budget))
    if box.free().size == 0:
        ev(box.center)
    elif method == "pattern":
        _pattern_search(ev, box, min_rel_step)
    else:
        _grid_search(ev, box)
    if ev.best_x is None:
        raise NoConvergedCandidate(f"none of the {len(ev.log)} candidate(s) reached an equilibrium")
    return BilevelResult(ev.best_x[:5], ev.best_x[5:], ev.best, ev.log, method, ev.best_res)

