"""Weakly supervised grounding of subject-predicate-object queries in
videos represented as per-frame region proposal grids."""

from .data import (BBox, EmbeddingTable, RegionProposal, RelationInstance,
                   RelationParseError, RelationQuery, Trajectory,
                   VideoFeatures, VideoRelationSample, Vocabulary,
                   format_relation, tokenize_relation)
from .estimator import (SIGMA_GRID, RelationGrounder, TrainingDiverged,
                        TrainReport, validation_split)
from .formats import (FormatError, load_checkpoint, load_samples,
                      load_video_features, read_grounding_results,
                      save_checkpoint, save_video_features,
                      write_grounding_results, write_manifest)
from .linking import GroundingResult, ground, random_baseline
from .metrics import AccuracyReport, accuracy, spatial_iou
from .network import GroundingNetwork, NetworkConfig
from .synth import SceneSpec, build_scene, emit_dataset

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport", "BBox", "EmbeddingTable", "FormatError",
    "GroundingNetwork", "GroundingResult", "NetworkConfig", "RegionProposal",
    "RelationGrounder", "RelationInstance", "RelationParseError",
    "RelationQuery", "SIGMA_GRID", "SceneSpec", "TrainReport",
    "TrainingDiverged", "Trajectory", "VideoFeatures", "VideoRelationSample",
    "Vocabulary", "accuracy", "build_scene", "emit_dataset",
    "format_relation", "ground", "load_checkpoint", "load_samples",
    "load_video_features", "random_baseline", "read_grounding_results",
    "save_checkpoint", "save_video_features", "spatial_iou",
    "tokenize_relation", "validation_split", "write_grounding_results",
    "write_manifest",
]
