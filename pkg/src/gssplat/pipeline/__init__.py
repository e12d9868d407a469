"""Scenes, datasets, feed-forward reconstruction, training, fitting and evaluation."""
from .dataset import load_split, read_scene, write_manifest, write_scene
from .evaluate import evaluate, score_views, write_report
from .fit import FitConfig, FitResult, fit_scene, initial_fields
from .model import (GSsplatModel, ReconstructionConfig, ReconstructionResult, SceneForward,
                    reconstruct)
from .scenes import OrbitSpec, Primitive, SceneData, SceneSpec, generate_scene, random_scene_spec
from .train import TrainConfig, TrainResult, train
from .views import ViewSet

__all__ = [
    "FitConfig", "FitResult", "GSsplatModel", "OrbitSpec", "Primitive", "ReconstructionConfig",
    "ReconstructionResult", "SceneData", "SceneForward", "SceneSpec", "TrainConfig",
    "TrainResult", "ViewSet", "evaluate", "fit_scene", "generate_scene", "initial_fields",
    "load_split", "random_scene_spec", "read_scene", "reconstruct", "score_views", "train",
    "write_manifest", "write_report", "write_scene",
]
