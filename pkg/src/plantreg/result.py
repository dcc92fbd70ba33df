from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .geometry import RigidTransform


class ConvergedBy(str, enum.Enum):
    ALPHA_BOUND = "alpha_bound"
    MAX_ITERATIONS = "max_iterations"
    CONFIDENCE = "confidence"
    TOLERANCE = "tolerance"


class RegistrationError(RuntimeError):
    """A registration stage failed; ``transform`` is the last usable estimate, if any."""

    def __init__(self, message: str, transform: RigidTransform | None = None, stage: str = ""):
        super().__init__(message)
        self.transform = transform
        self.stage = stage


@dataclass
class RegistrationResult:
    transform: RigidTransform
    inlier_count: int
    inlier_rmse: float
    fitness: float
    iterations_used: int
    converged_by: ConvergedBy
    # correspondence rows (coarse) or source indices (fine) counted as inliers
    inliers: NDArray[np.intp] = field(default_factory=lambda: np.empty(0, dtype=np.intp))
    # per-iteration diagnostics: (mu, objective) for FGR, rmse for ICP
    history: list = field(default_factory=list)
