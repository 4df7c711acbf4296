"""Lesion segmentation evaluation and challenge ranking toolkit."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("lesionbench")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from ._kernels import BACKEND, available_backends
from .components import ComponentLabeling, OverlapTable, component_stats, label_components, overlap_table
from .harness import CaseManifest, CaseMetrics, EvaluationConfig, evaluate_all, evaluate_case, load_manifest, majority_vote
from .lesion_metrics import (
    ONE_VOXEL,
    MatchCriterion,
    cc_dsc,
    detection_flags,
    error_taxonomy,
    fnv,
    fpv,
    panoptic,
    pooled_f1,
    sensitivity_sweep,
    stratified_sensitivity,
    taxonomy_sweep,
)
from .ranking import (
    CaseTable,
    RankWeights,
    SubsetSummary,
    bootstrap_ranks,
    classification_summary,
    official_ranking,
    rank,
)
from .reports import emit_reports
from .stats import holm_adjust, wilcoxon_signed_rank
from .synth import SynthParams, synth_case
from .volume_io import (
    BoxRegion,
    GridGeometry,
    IntensityVolume,
    LabelVolume,
    load_intensity,
    load_label,
    read_volume,
    save_volume,
    write_volume,
)
from .voxel_metrics import dsc, dsc_all, nsd, volume_ratio, volumetric_similarity

__all__ = [name for name in dir() if not name.startswith("_")]
