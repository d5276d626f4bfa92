"""Bottom-up instance grouping over per-point semantic scores and offsets."""
from .evaluation import (
    EvalReport, PRSweep, ap_suite, average_precision, box_ap, box_iou, evaluate, match_predictions,
    s3dis_metrics, semantic_pr_sweep,
)
from .grouping import (
    GroupingConfig, HardGrouping, SoftGrouping, class_subset, connected_components, hard_group,
    soft_group,
)
from .io import (
    FormatError, read_instances, read_proposals, read_refinement, read_scene, write_instances,
    write_proposals, write_refinement, write_scene,
)
from .losses import (
    LossReport, classification_loss, mask_loss, mask_score_loss, offset_loss, semantic_loss,
    total_loss,
)
from .refinement import (
    HeuristicRefiner, TargetAssignment, apply_external_refinement, assign_targets, extract_box,
    heuristic_refine, mask_iou, refine,
)
from .scene import (
    GroundTruth, OffsetField, PointCloud, Proposal, RefinedInstance, Scene, SemanticField, Violation,
    hard_labels, shift_points, validate_scene,
)
from .spatial import VoxelDownsampler, VoxelHashGrid, build_grid, query_radius, voxel_downsample
from .synthesis import SynthConfig, corrupt_semantics, make_scene, synth_scene

__version__ = "0.1.0"

__all__ = [
    "EvalReport", "FormatError", "GroundTruth", "GroupingConfig", "HardGrouping", "HeuristicRefiner",
    "LossReport", "OffsetField", "PRSweep", "PointCloud", "Proposal", "RefinedInstance", "Scene",
    "SemanticField", "SoftGrouping", "SynthConfig", "TargetAssignment", "Violation",
    "VoxelDownsampler", "VoxelHashGrid", "ap_suite", "apply_external_refinement", "assign_targets",
    "average_precision", "box_ap", "box_iou", "build_grid", "class_subset", "classification_loss",
    "connected_components", "corrupt_semantics", "evaluate", "extract_box", "hard_group",
    "hard_labels", "heuristic_refine", "make_scene", "mask_iou", "mask_loss", "mask_score_loss",
    "match_predictions", "offset_loss", "query_radius", "read_instances", "read_proposals",
    "read_refinement", "read_scene", "refine", "s3dis_metrics", "semantic_loss",
    "semantic_pr_sweep", "shift_points", "soft_group", "synth_scene", "total_loss",
    "validate_scene", "voxel_downsample", "write_instances", "write_proposals", "write_refinement",
    "write_scene",
]
