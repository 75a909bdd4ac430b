"""Synthetic rigid-body video data, alignment and depth losses, and trajectory invariance scoring."""

__version__ = "0.1.0"

from .align import GramAligner, GridAdapter, Projector, TokenProjector, gram, grid_adapt, phys_loss
from .dataset import generate_dataset, load_dataset, load_sample
from .depth import ScaleShiftAligner, depth_objective, pixel_loss, ssi_fit, structure_loss, temporal_loss
from .objective import ObjectiveWeights, total_loss
from .pis import PISScorer, evaluate_video, extract_tracks, kinematics, pis_score
from .projection import Kinematics3D, project_kinematics, projectile_state
from .render import render_frame
from .scene import SamplingPreset, SceneConfig, render_prompt, sample_scene
from .sim import Trajectory, simulate

__all__ = [
    "GramAligner", "GridAdapter", "Kinematics3D", "ObjectiveWeights", "PISScorer", "Projector",
    "SamplingPreset", "ScaleShiftAligner", "SceneConfig", "TokenProjector", "Trajectory",
    "depth_objective", "evaluate_video", "extract_tracks", "generate_dataset", "gram", "grid_adapt",
    "kinematics", "load_dataset", "load_sample", "phys_loss", "pis_score", "pixel_loss",
    "project_kinematics", "projectile_state", "render_frame", "render_prompt", "sample_scene",
    "simulate", "ssi_fit", "structure_loss", "temporal_loss", "total_loss",
]
