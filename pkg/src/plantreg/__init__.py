"""Rigid time-series registration of plant point clouds and Gaussian-splat exports."""

from __future__ import annotations

from .geometry import PointCloud, RigidTransform, SigmaWeights, compose, kabsch, relative_magnitude
from .spatial import KdIndex
from .splats import FilterConfig, FilterReport, SplatRecord, SplatSet, filter_splats
from .features import FeatureConfig, compute_fpfh, estimate_normals
from .result import ConvergedBy, RegistrationError, RegistrationResult
from .coarse import CorrespondenceSet, FgrConfig, RansacConfig, fgr_refine, match_features, ransac_align
from .fine import IcpConfig, IcpVariant, icp_refine
from .formats import PlyError, read_ply, write_ply
from .temporal import (
    DeformationField,
    PipelineConfig,
    ReferencePolicy,
    SequenceAlignment,
    TimeSeries,
    check_constraints,
    register_pair,
    register_sequence,
)
from .cameras import DivisionCamera, PolyCamera, convert_distortion
from .render import TurntableSpec, render_turntable

__version__ = "0.1.0"

__all__ = [
    "ConvergedBy", "CorrespondenceSet", "DeformationField", "DivisionCamera", "FeatureConfig",
    "FgrConfig", "FilterConfig", "FilterReport", "IcpConfig", "IcpVariant", "PipelineConfig",
    "PlyError", "PointCloud", "PolyCamera", "RansacConfig", "ReferencePolicy", "RegistrationError",
    "RegistrationResult", "RigidTransform", "SequenceAlignment", "SigmaWeights", "SplatRecord",
    "SplatSet", "TimeSeries", "TurntableSpec", "KdIndex", "check_constraints", "compose",
    "compute_fpfh", "convert_distortion", "estimate_normals", "fgr_refine", "filter_splats",
    "icp_refine", "kabsch", "match_features", "ransac_align", "read_ply", "register_pair",
    "register_sequence", "relative_magnitude", "render_turntable", "write_ply",
]
