"""Collaborative rover/copter planning under uncertain environments.

scLTL missions are compiled to finite automata; the rover plans on a product
of its motion MDP and the automaton whose transitions are weighted by
Bayesian beliefs, while the copter explores to reduce belief entropy.
"""
from .scltl import Fsa, FormulaError, compile, compile_text, en_set, good_prefix_oracle, parse_formula
from .world import BeliefMap, ConfigError, GridWorld, SensorModel, load_map
from .mdp import FiniteMdp, build_grid_mdp, reachability_value_iteration
from .product import build_product, compute_b_max, synthesize_policy
from .exploration import global_explore, local_explore
from .mission import MissionConfig, RunTrace, convergence_report, ground_truth_product, run

__all__ = [
    "Fsa", "FormulaError", "compile", "compile_text", "en_set", "good_prefix_oracle",
    "parse_formula", "BeliefMap", "ConfigError", "GridWorld", "SensorModel", "load_map",
    "FiniteMdp", "build_grid_mdp", "reachability_value_iteration", "build_product",
    "compute_b_max", "synthesize_policy", "global_explore", "local_explore", "MissionConfig",
    "RunTrace", "convergence_report", "ground_truth_product", "run",
]
__version__ = "0.1.0"
