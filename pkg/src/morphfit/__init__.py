"""Landmark-based 3D morphable model fitting and pose normalization."""

from .camera import (
    AffineCamera,
    PoseAngles,
    camera_from_pose,
    estimate_affine_camera,
    estimate_pose_posit,
    extract_pose_angles,
    posit_pose_angles,
    reprojection_rmse,
)
from .errors import MorphfitError
from .evaluation import (
    DetCurve,
    ImprovementCurve,
    ScoreMatrix,
    bin_by_yaw,
    binned_frr,
    compute_det,
    frr_at_far,
    improvement_curve,
)
from .fitting import FitConfig, FitResult, fit, fit_shape, fitted_mesh, landmark_rmse
from .landmarks import (
    HogConfig,
    LandmarkSet,
    RegressorCascade,
    detect_landmarks,
    extract_hog,
    load_cascade,
    normalized_error,
    save_cascade,
    train_cascade,
)
from .model import (
    Mesh,
    MorphableModel,
    generate_synthetic_model,
    instantiate,
    load_model,
    save_model,
)
from .texture import IsomapChart, TextureMap, compute_isomap, remap_texture, render_frontal

__version__ = "0.1.0"

__all__ = [
    "AffineCamera", "PoseAngles", "camera_from_pose", "estimate_affine_camera",
    "estimate_pose_posit", "extract_pose_angles", "posit_pose_angles", "reprojection_rmse",
    "MorphfitError",
    "DetCurve", "ImprovementCurve", "ScoreMatrix", "bin_by_yaw", "binned_frr", "compute_det", "frr_at_far",
    "improvement_curve",
    "FitConfig", "FitResult", "fit", "fit_shape", "fitted_mesh", "landmark_rmse",
    "HogConfig", "LandmarkSet", "RegressorCascade", "detect_landmarks", "extract_hog",
    "load_cascade", "normalized_error", "save_cascade", "train_cascade",
    "Mesh", "MorphableModel", "generate_synthetic_model", "instantiate", "load_model", "save_model",
    "IsomapChart", "TextureMap", "compute_isomap", "remap_texture", "render_frontal",
]
