"""Housing-quality mapping on a 100 m grid from fused image features."""

from .errors import (LivmapError, PipelineError, TrainingDiverged,
                     UndefinedResultError, ValidationError)
from .grid import (CellId, GridBounds, PatchGeometry, ScoreGrid, cell_of_point,
                   load_score_grid, patch_extent_of_cell, save_score_grid)
from .splits import (SplitAssignment, SquareSpec, generate_splits, split_stats,
                     validate_splits)
from .imagery import (FilterSpec, GeoImage, apply_filter, assign_images_to_cells,
                      filter_buildings, filter_outdoors)
from .features import (FeatureStore, PatchBundle, SplitDatasets, build_dataset,
                       merge_features, pool_ground_features)
from .model import (AdamState, FusionHeadParams, TrainConfig, TrainHistory,
                    adam_step, backward, forward, init_params, load_checkpoint,
                    mse_loss, predict, save_checkpoint, train_model)
from .evaluation import (MetricsReport, evaluate_split, kendall_tau,
                         render_score_map, rmse, save_score_map)
from .synth import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "LivmapError", "PipelineError", "TrainingDiverged", "UndefinedResultError",
    "ValidationError",
    "CellId", "GridBounds", "PatchGeometry", "ScoreGrid", "cell_of_point",
    "load_score_grid", "patch_extent_of_cell", "save_score_grid",
    "SplitAssignment", "SquareSpec", "generate_splits", "split_stats",
    "validate_splits",
    "FilterSpec", "GeoImage", "apply_filter", "assign_images_to_cells",
    "filter_buildings", "filter_outdoors",
    "FeatureStore", "PatchBundle", "SplitDatasets", "build_dataset",
    "merge_features", "pool_ground_features",
    "AdamState", "FusionHeadParams", "TrainConfig", "TrainHistory", "adam_step",
    "backward", "forward", "init_params", "load_checkpoint", "mse_loss",
    "predict", "save_checkpoint", "train_model",
    "MetricsReport", "evaluate_split", "kendall_tau", "render_score_map",
    "rmse", "save_score_map",
    "SynthConfig", "generate",
    "__version__",
]
