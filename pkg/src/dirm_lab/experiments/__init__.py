"""Preset experiment pipelines producing :class:`ExperimentReport` tables."""

from .features import StudyGenerator, run_feature_stability, run_penalty_modes
from .report import ExperimentReport, PlotSpec
from .synthetic import run_coeff_tables, run_fig1, run_stability
from .theorem1 import run_theorem1_check, vertex_oracle

__all__ = [
    "ExperimentReport",
    "PlotSpec",
    "StudyGenerator",
    "run_coeff_tables",
    "run_feature_stability",
    "run_fig1",
    "run_penalty_modes",
    "run_stability",
    "run_theorem1_check",
    "vertex_oracle",
]
