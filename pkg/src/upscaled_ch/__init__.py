"""
upscaled-ch: homogenized phase-field model of two-phase flow in porous media

Builds a periodic reference cell, solves its corrector and Stokes problems,
assembles the effective tensors and integrates the upscaled convective
Cahn-Hilliard equation on the macroscopic domain.
"""

__version__ = "0.1.0"
__author__ = "upscaled-ch developers"
__description__ = (
    "Homogenized convective Cahn-Hilliard pipeline for two-phase porous-media flow"
)

# Package metadata
__package_name__ = "upscaled-ch"
__license__ = "MIT"

# Export main components
from .cli import main
from .config import PipelineConfig, load_config, parse_config
from .pipeline import PipelineResult, StageResult, StageStatus, run_pipeline, run_stage

__all__ = [
    "__version__",
    "__author__",
    "__description__",
    "main",
    "PipelineConfig",
    "load_config",
    "parse_config",
    "PipelineResult",
    "StageResult",
    "StageStatus",
    "run_pipeline",
    "run_stage",
]
