"""volkey: volumetric keypoint extraction, fast descriptors, and 7-DOF matching."""

__version__ = "0.1.0"

from .config import PipelineConfig
from .detect import Keypoint, detect_keypoints
from .match import SimilarityTransform7DOF, count_inlier_matches
from .pipeline import ExtractionResult, extract_features
from .scalespace import build_dog_pyramid, build_gaussian_pyramid
from .volume import Volume, load_nifti_subset, load_raw, load_volume, save_raw

__all__ = [
    "__version__",
    "PipelineConfig",
    "Keypoint",
    "detect_keypoints",
    "SimilarityTransform7DOF",
    "count_inlier_matches",
    "ExtractionResult",
    "extract_features",
    "build_dog_pyramid",
    "build_gaussian_pyramid",
    "Volume",
    "load_nifti_subset",
    "load_raw",
    "load_volume",
    "save_raw",
]
