"""Fast intra mode decision: residual-spectrum and neighbour-mode features, small MLP
mode-class scorers, and a desk-scale encoding replay harness."""

from .features import PcaModel, concat_features, extract_x1, extract_x2, pca_apply, pca_fit
from .harness import EncodeParams, SceneReport, baseline_encode, encode_scene, extract_dataset, sweep
from .intra import GroundTruth, label_block, mode_to_class, predict
from .media import LumaBlock, LumaFrame, ReferenceSamples, gather_reference_samples, load_frames, partition_grid
from .mlp import MlpModel, TrainConfig, scg_train
from .strategy import StrategyBundle, StrategyKind, candidate_list

__version__ = "0.1.0"

__all__ = [
    "EncodeParams", "GroundTruth", "LumaBlock", "LumaFrame", "MlpModel", "PcaModel", "ReferenceSamples",
    "SceneReport", "StrategyBundle", "StrategyKind", "TrainConfig", "baseline_encode", "candidate_list",
    "concat_features", "encode_scene", "extract_dataset", "extract_x1", "extract_x2", "gather_reference_samples",
    "label_block", "load_frames", "mode_to_class", "partition_grid", "pca_apply", "pca_fit", "predict",
    "scg_train", "sweep",
]
