"""Mean field route choice on a five-link network with noisy path preferences."""
from .bilevel import BilevelResult, ParamBox, bilevel_objective, optimize_params
from .equilibrium import EquilibriumResult, SplitFunction, apply_psi, epsilon_partition, find_equilibrium
from .errors import *  # noqa: F401,F403
from .mass import MassTrajectory, evolve_mass, local_decision
from .network import Network, build_network
from .numerics import BumpThroughput, ConstantThroughput, SmoothTrapezoidThroughput, TimeGrid
from .preferences import evolve_preferences, perturbed_best_response
from .scenario import Scenario, SolverConfig, parse_scenario, scenario_from_dict, unit_scenario
from .values import path_costs, value_field

__version__ = "0.1.0"
