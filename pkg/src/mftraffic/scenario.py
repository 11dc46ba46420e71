"""Problem instances and their JSON encoding."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, SchemaError, ValidationError
from .network import Network, build_network
from .numerics import (
    SampledFunction,
    ThroughputSpec,
    TimeGrid,
    sample_throughput,
    throughput_from_dict,
    throughput_to_dict,
)
from .values import CongestionParams


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-6
    max_iter: int = 200
    damping: float = 0.5
    epsilon: float | None = None
    tie_tol: float = 1e-6
    split: float = 0.5

    def __post_init__(self):
        if not self.tol > 0:
            raise ValidationError("solver.tol must be > 0", "solver")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValidationError("solver.max_iter must be a positive integer", "solver")
        if not 0 < self.damping <= 1:
            raise ValidationError("solver.damping must lie in (0, 1]", "solver")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValidationError("solver.epsilon must be > 0", "solver")
        if not self.tie_tol >= 0:
            raise ValidationError("solver.tie_tol must be >= 0", "solver")
        if not 0 <= self.split <= 1:
            raise ValidationError("solver.split must lie in [0, 1]", "solver")


@dataclass
class Scenario:
    network: Network
    horizon: float
    grid_points: int
    throughput: ThroughputSpec
    beta: float
    eta: float
    alpha: float
    alpha_prime: np.ndarray
    alpha_second: np.ndarray
    rho_max: float
    z0: np.ndarray | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    grid: TimeGrid = field(init=False, repr=False)
    lam: SampledFunction = field(init=False, repr=False)
    lam_dot: SampledFunction = field(init=False, repr=False)
    congestion: CongestionParams = field(init=False, repr=False)

    def __post_init__(self):
        for name, ok in (
            ("beta", self.beta >= 0),
            ("eta", self.eta > 0),
            ("alpha", self.alpha > 0),
            ("rho_max", self.rho_max > 0),
        ):
            value = getattr(self, name)
            if not (math.isfinite(value) and ok):
                raise ValidationError(f"{name} = {value} is out of range", name)
        self.grid = TimeGrid(float(self.horizon), int(self.grid_points))
        self.lam, self.lam_dot = sample_throughput(self.throughput, self.grid)
        self.congestion = CongestionParams(self.alpha_prime, self.alpha_second)
        self.alpha_prime = self.congestion.alpha_prime
        self.alpha_second = self.congestion.alpha_second
        if self.z0 is not None:
            z0 = np.array(self.z0, dtype=float)
            if z0.shape != (3,) or not np.all(np.isfinite(z0)) or np.any(z0 < 0):
                raise ValidationError("z0 must be three nonnegative numbers", "z0")
            self.z0 = z0

    @property
    def lambda_max(self) -> float:
        return float(self.lam.values.max())

    @property
    def mass_lipschitz(self) -> float:
        """Slope bound for link masses: largest inflow plus all capacities."""
        return self.lambda_max + float(self.network.capacities.sum())

    @property
    def phi_max(self) -> float:
        return self.congestion.phi_max(self.rho_max)

    def initial_preferences(self) -> np.ndarray:
        if self.z0 is not None:
            return self.z0.copy()
        return np.full(3, self.lam.values[0] / 3.0)

    def with_congestion(self, alpha_prime, alpha_second) -> "Scenario":
        return self.replace(alpha_prime=np.asarray(alpha_prime, float), alpha_second=np.asarray(alpha_second, float))

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        doc = {
            "network": {
                "lengths": self.network.lengths.tolist(),
                "capacities": self.network.capacities.tolist(),
            },
            "horizon": self.horizon,
            "grid_points": self.grid_points,
            "throughput": throughput_to_dict(self.throughput),
            "beta": self.beta,
            "eta": self.eta,
            "alpha": self.alpha,
            "alpha_prime": self.alpha_prime.tolist(),
            "alpha_second": self.alpha_second.tolist(),
            "rho_max": self.rho_max,
            "solver": dataclasses.asdict(self.solver),
        }
        if self.z0 is not None:
            doc["z0"] = self.z0.tolist()
        return doc


_REQUIRED = (
    "network", "horizon", "grid_points", "throughput", "beta", "eta",
    "alpha", "alpha_prime", "alpha_second", "rho_max",
)
_OPTIONAL = ("z0", "solver")
_THROUGHPUT_KEYS = {
    "constant": {"kind", "level"},
    "bump": {"kind", "peak", "start", "end"},
    "trapezoid_smooth": {"kind", "level", "ramp"},
}


def _check_keys(doc, required, optional, where):
    if not isinstance(doc, dict):
        raise SchemaError(f"{where} must be an object")
    for key in required:
        if key not in doc:
            raise SchemaError(f"missing key {where}.{key}".replace("<root>.", ""))
    unknown = sorted(set(doc) - set(required) - set(optional))
    if unknown:
        raise SchemaError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _number(doc, key, where=""):
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}{key} must be a number")
    return value


def _vector(doc, key, size, where=""):
    value = doc[key]
    if (
        not isinstance(value, list)
        or len(value) != size
        or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)
    ):
        raise SchemaError(f"{where}{key} must be an array of {size} numbers")
    return np.array(value, dtype=float)


def scenario_from_dict(doc: dict) -> Scenario:
    _check_keys(doc, _REQUIRED, _OPTIONAL, "<root>")
    net = doc["network"]
    _check_keys(net, ("lengths", "capacities"), (), "network")
    thr = doc["throughput"]
    if not isinstance(thr, dict) or thr.get("kind") not in _THROUGHPUT_KEYS:
        raise SchemaError("throughput.kind must be one of: " + ", ".join(_THROUGHPUT_KEYS))
    _check_keys(thr, sorted(_THROUGHPUT_KEYS[thr["kind"]]), (), "throughput")
    for key in _THROUGHPUT_KEYS[thr["kind"]] - {"kind"}:
        _number(thr, key, "throughput.")
    solver_doc = doc.get("solver", {})
    fields = [f.name for f in dataclasses.fields(SolverConfig)]
    _check_keys(solver_doc, (), fields, "solver")
    grid_points = _number(doc, "grid_points")
    if int(grid_points) != grid_points:
        raise SchemaError("grid_points must be an integer")
    return Scenario(
        network=build_network(_vector(net, "lengths", 5, "network."), _vector(net, "capacities", 5, "network.")),
        horizon=float(_number(doc, "horizon")),
        grid_points=int(grid_points),
        throughput=throughput_from_dict(thr),
        beta=float(_number(doc, "beta")),
        eta=float(_number(doc, "eta")),
        alpha=float(_number(doc, "alpha")),
        alpha_prime=_vector(doc, "alpha_prime", 5),
        alpha_second=_vector(doc, "alpha_second", 5),
        rho_max=float(_number(doc, "rho_max")),
        z0=_vector(doc, "z0", 3) if "z0" in doc else None,
        solver=SolverConfig(**solver_doc),
    )


def parse_scenario(path) -> Scenario:
    """Read and validate a scenario JSON document."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return scenario_from_dict(doc)


def unit_scenario(**overrides) -> Scenario:
    """Unit lengths, capacities 10, constant throughput 1, T = 2, N = 2000."""
    doc = {
        "network": {"lengths": [1.0] * 5, "capacities": [10.0] * 5},
        "horizon": 2.0,
        "grid_points": 2000,
        "throughput": {"kind": "constant", "level": 1.0},
        "beta": 1.0,
        "eta": 1.0,
        "alpha": 1.0,
        "alpha_prime": [0.0] * 5,
        "alpha_second": [0.0] * 5,
        "rho_max": 100.0,
    }
    doc.update(overrides)
    return scenario_from_dict(doc)
