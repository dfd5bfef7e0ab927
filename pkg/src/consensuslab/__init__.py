"""Consensus analysis and simulation for networks with relative-state-dependent noise."""

from .analysis import (AnalysisReport, GainMatrix, analyze, as_rate_matrices, lambda_K_bound,
                       ms_decision_homogeneous, mu_estimate, optimal_gain, psi_f_matrix,
                       small_gain_interval, steady_state_error_bounds, certificate_matrices,
                       two_agent_closed_form)
from .backend import BACKEND
from .graph import (Graph, LaplacianSpectrum, build_graph, channel_matrix, complete_graph,
                    graph_metrics, is_connected, laplacian, path_graph, spectrum)
from .noise import NoiseModel, build_channels, evaluate_intensity, growth_bound
from .simulation import (Ensemble, SimConfig, Trajectory, as_rate_estimate, closed_form_symmetric,
                         lil_normalized_curve, run_ensemble, simulate_trajectory)

__version__ = "0.1.0"

__all__ = [
    "AnalysisReport", "BACKEND", "Ensemble", "GainMatrix", "Graph", "LaplacianSpectrum",
    "NoiseModel", "SimConfig", "Trajectory", "analyze", "as_rate_estimate", "as_rate_matrices",
    "build_channels", "build_graph", "channel_matrix", "closed_form_symmetric", "complete_graph",
    "evaluate_intensity", "graph_metrics", "growth_bound", "is_connected", "lambda_K_bound",
    "laplacian", "lil_normalized_curve", "ms_decision_homogeneous", "mu_estimate",
    "optimal_gain", "path_graph", "psi_f_matrix", "run_ensemble", "simulate_trajectory",
    "small_gain_interval", "spectrum", "steady_state_error_bounds", "certificate_matrices",
    "two_agent_closed_form",
]
