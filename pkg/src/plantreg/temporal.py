"""Chaining pairwise registrations into one time-consistent sequence.

Every frame is brought into the first frame's coordinates. Each pair runs
normals + FPFH, descriptor matching, RANSAC, robust refinement and the ICP
stages in order. The step-size bound (``alpha``) and the growth bound
(``beta``) are evaluated afterwards and reported; they never alter a result.
"""

from __future__ import annotations

import datetime as dt
import enum
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .coarse import FgrConfig, RansacConfig, fgr_refine, match_features, ransac_align
from .features import FeatureConfig, compute_fpfh, estimate_normals
from .fine import IcpConfig, IcpVariant, icp_refine, inlier_rmse
from .formats import finite_or_none, read_ply
from .geometry import PointCloud, RigidTransform, SigmaWeights, compose, relative_magnitude
from .result import RegistrationError, RegistrationResult
from .spatial import KdIndex, average_spacing
from .splats import FilterConfig, SplatSet, filter_splats


# smallest share of the coarse inlier count a fine result may keep
OVERLAP_KEEP = 0.95


class ReferencePolicy(str, enum.Enum):
    PREVIOUS_FRAME = "previous_frame"
    FIRST_FRAME = "first_frame"


@dataclass(frozen=True)
class SeriesEntry:
    timestamp: dt.date
    cloud: PointCloud | SplatSet | Path
    label: str = ""


@dataclass(frozen=True)
class TimeSeries:
    entries: tuple[SeriesEntry, ...]

    def __post_init__(self) -> None:
        entries = tuple(self.entries)
        if not entries:
            raise ValueError("time series is empty")
        for a, b in zip(entries, entries[1:]):
            if not b.timestamp > a.timestamp:
                raise ValueError(f"timestamps must strictly increase ({a.timestamp} -> {b.timestamp})")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def mean_interval_days(self) -> float:
        if len(self.entries) < 2:
            return 0.0
        span = self.entries[-1].timestamp - self.entries[0].timestamp
        return span.days / (len(self.entries) - 1)

    @classmethod
    def from_manifest(cls, manifest: list[dict], base: Path | None = None) -> TimeSeries:
        """Build from ``[{"date": "YYYY-MM-DD", "cloud": path, "label": ...}, ...]``."""
        entries = []
        for i, item in enumerate(manifest):
            try:
                date = dt.date.fromisoformat(item["date"])
                path = Path(item["cloud"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"manifest entry {i}: {exc}") from None
            if base is not None and not path.is_absolute():
                path = base / path
            entries.append(SeriesEntry(date, path, str(item.get("label", ""))))
        return cls(tuple(entries))


@dataclass(frozen=True)
class PipelineConfig:
    alpha: float = 0.1
    beta: float = 1e-4
    sigma_weights: SigmaWeights = field(default_factory=SigmaWeights)
    cadence_max_days: float = 3.0
    reference_policy: ReferencePolicy = ReferencePolicy.PREVIOUS_FRAME
    filter: FilterConfig = field(default_factory=FilterConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    fgr: FgrConfig = field(default_factory=FgrConfig)
    # growth moves leaf points by more than the sample spacing; down-weighting
    # those residuals keeps them from dragging the rigid estimate
    icp: tuple[IcpConfig, ...] = (
        IcpConfig(variant=IcpVariant.POINT_TO_PLANE, robust_scale=1.0),
        IcpConfig(variant=IcpVariant.COLORED, robust_scale=1.0),
    )
    mutual_matching: bool = True
    fgr_on_all_matches: bool = False
    # applied on top of every frame's transform (stem-base / growth-axis frame)
    world_transform: RigidTransform = field(default_factory=RigidTransform)

    def __post_init__(self) -> None:
        object.__setattr__(self, "reference_policy", ReferencePolicy(self.reference_policy))
        object.__setattr__(self, "icp", tuple(self.icp))
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if not self.cadence_max_days > 0:
            raise ValueError("cadence_max_days must be positive")


@dataclass
class DeformationField:
    """Per-point distance left after rigid alignment, one value per source point."""

    n_points: int
    mean: float
    max: float
    sum_of_squares: float
    magnitudes: NDArray[np.float64] | None = None

    @classmethod
    def from_magnitudes(cls, magnitudes: NDArray[np.float64]) -> DeformationField:
        m = np.asarray(magnitudes, dtype=np.float64)
        if len(m) == 0:
            return cls(0, 0.0, 0.0, 0.0, m)
        return cls(len(m), float(m.mean()), float(m.max()), float(np.sum(m * m)), m)

    @property
    def mean_square(self) -> float:
        return self.sum_of_squares / self.n_points if self.n_points else 0.0

    def to_dict(self) -> dict:
        return {"n_points": self.n_points, "mean": self.mean, "max": self.max,
                "sum_of_squares": self.sum_of_squares, "mean_square": self.mean_square}

    @classmethod
    def from_dict(cls, d: dict) -> DeformationField:
        return cls(int(d["n_points"]), float(d["mean"]), float(d["max"]), float(d["sum_of_squares"]))


@dataclass(frozen=True)
class ConstraintReport:
    alpha_ok: bool
    alpha_value: float
    beta_ok: bool
    beta_value: float


@dataclass
class PairResult:
    transform: RigidTransform
    loss: float
    deformation: DeformationField
    coarse: RegistrationResult | None = None
    fine: list[RegistrationResult] = field(default_factory=list)
    correspondence_distance: float = math.inf
    # share of source points within correspondence_distance under ``transform``
    fitness: float = 1.0


@dataclass
class AlignmentEntry:
    timestamp: dt.date
    label: str
    transform: RigidTransform
    loss: float
    deformation: DeformationField
    constraints: ConstraintReport
    fitness: float = 1.0


@dataclass
class SequenceAlignment:
    entries: list[AlignmentEntry]
    reference_label: str
    reference_policy: ReferencePolicy
    warnings: list[str] = field(default_factory=list)

    def transforms(self) -> list[RigidTransform]:
        return [e.transform for e in self.entries]

    def to_dict(self) -> dict:
        return {
            "reference_label": self.reference_label,
            "reference_policy": self.reference_policy.value,
            "warnings": list(self.warnings),
            "entries": [
                {
                    "date": e.timestamp.isoformat(),
                    "label": e.label,
                    "transform": [float(v) for v in e.transform.as_matrix().reshape(-1)],
                    "loss": finite_or_none(e.loss),
                    "fitness": e.fitness,
                    "deformation": e.deformation.to_dict(),
                    "constraints": {
                        "alpha_ok": e.constraints.alpha_ok,
                        "alpha_value": e.constraints.alpha_value,
                        "beta_ok": e.constraints.beta_ok,
                        "beta_value": e.constraints.beta_value,
                    },
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SequenceAlignment:
        entries = []
        for e in d["entries"]:
            c = e["constraints"]
            entries.append(
                AlignmentEntry(
                    dt.date.fromisoformat(e["date"]),
                    e.get("label", ""),
                    RigidTransform.from_matrix(np.asarray(e["transform"], dtype=np.float64).reshape(4, 4)),
                    math.inf if e["loss"] is None else float(e["loss"]),
                    DeformationField.from_dict(e["deformation"]),
                    ConstraintReport(bool(c["alpha_ok"]), float(c["alpha_value"]),
                                     bool(c["beta_ok"]), float(c["beta_value"])),
                    float(e.get("fitness", 1.0)),
                )
            )
        return cls(entries, d.get("reference_label", ""),
                   ReferencePolicy(d.get("reference_policy", "previous_frame")), list(d.get("warnings", [])))


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, transform: RigidTransform | None = None):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.transform = transform


class SequenceError(RuntimeError):
    """A pair failed; ``partial`` holds the alignment of all frames before it."""

    def __init__(self, index: int, cause: Exception, partial: SequenceAlignment):
        super().__init__(f"registration of frame {index} failed: {cause}")
        self.index = index
        self.cause = cause
        self.partial = partial


def _prepare(pc: PointCloud, cfg: FeatureConfig, radius: float) -> tuple[PointCloud, KdIndex, NDArray]:
    idx = KdIndex(pc)
    with_n, _ = estimate_normals(pc, idx, cfg)
    desc, _ = compute_fpfh(with_n, idx, cfg, radius=radius)
    return with_n, idx, desc


def register_pair(
    src: PointCloud, ref: PointCloud, cfg: PipelineConfig = PipelineConfig(), seed: int | None = None
) -> PairResult:
    """Rigidly align ``src`` onto ``ref``; report the inlier-RMSE loss and residual field."""
    spacing = average_spacing(ref)
    radius = cfg.features.radius_for(ref)
    try:
        src_n, _, src_desc = _prepare(src, cfg.features, radius)
        ref_n, ref_idx, ref_desc = _prepare(ref, cfg.features, radius)
    except ValueError as exc:
        raise StageError("features", str(exc)) from exc

    ransac_cfg = cfg.ransac
    if seed is not None:
        ransac_cfg = replace(ransac_cfg, rng_seed=seed)
    thr = ransac_cfg.inlier_threshold if ransac_cfg.inlier_threshold is not None else 1.5 * spacing
    ransac_cfg = replace(ransac_cfg, inlier_threshold=thr)
    try:
        corr = match_features(src_desc, ref_desc, mutual=cfg.mutual_matching)
        if len(corr) < ransac_cfg.sample_size:
            corr = match_features(src_desc, ref_desc, mutual=False)
        coarse = ransac_align(src_n, ref_n, corr, ransac_cfg)
    except (ValueError, RegistrationError) as exc:
        raise StageError("ransac", str(exc), getattr(exc, "transform", None)) from exc

    fgr_cfg = cfg.fgr if cfg.fgr.mu_floor is not None else replace(cfg.fgr, mu_floor=thr**2)
    survivors = corr if cfg.fgr_on_all_matches or coarse.inlier_count == 0 else corr.subset(coarse.inliers)
    try:
        refined = fgr_refine(src_n, ref_n, survivors, coarse.transform, fgr_cfg)
    except (ValueError, RegistrationError) as exc:
        raise StageError("fgr", str(exc), getattr(exc, "transform", None)) from exc
    coarse_t = refined.transform

    current = coarse_t
    fine_results = []
    max_d = 3.0 * spacing
    for icp_cfg in cfg.icp:
        if icp_cfg.variant is IcpVariant.COLORED and (src.colors is None or ref.colors is None):
            warnings.warn("colored ICP skipped: clouds lack colors", stacklevel=2)
            continue
        if icp_cfg.correspondence_distance is None:
            icp_cfg = replace(icp_cfg, correspondence_distance=3.0 * spacing)
        max_d = icp_cfg.correspondence_distance
        try:
            res = icp_refine(src_n, ref_n, ref_idx, current, icp_cfg)
        except (ValueError, RegistrationError) as exc:
            raise StageError(f"icp[{icp_cfg.variant.value}]", str(exc), getattr(exc, "transform", None)) from exc
        fine_results.append(res)
        current = res.transform

    loss, count = inlier_rmse(src, ref_idx, current, max_d)
    coarse_loss, coarse_count = inlier_rmse(src, ref_idx, coarse_t, max_d)
    # the fine stage must neither raise the loss nor give up overlap to lower it
    if coarse_loss < loss or count < OVERLAP_KEEP * coarse_count:
        current, loss, count = coarse_t, coarse_loss, coarse_count
    dist, _ = ref_idx.nearest(current.apply_points(src.points))
    return PairResult(
        transform=current,
        loss=loss if math.isfinite(loss) else math.inf,
        deformation=DeformationField.from_magnitudes(dist),
        coarse=refined,
        fine=fine_results,
        correspondence_distance=max_d,
        fitness=count / len(src),
    )


def load_frame(entry: SeriesEntry, cfg: PipelineConfig) -> PointCloud:
    obj = entry.cloud
    if isinstance(obj, (str, Path)):
        obj = read_ply(obj)
    if isinstance(obj, SplatSet):
        obj, _ = filter_splats(obj, cfg.filter)
    return obj


def _constraint(
    prev: RigidTransform | None, cur: RigidTransform, deformation: DeformationField, cfg: PipelineConfig
) -> ConstraintReport:
    a = 0.0 if prev is None else relative_magnitude(cur, prev, cfg.sigma_weights)
    b = deformation.mean_square
    return ConstraintReport(a <= cfg.alpha, a, b <= cfg.beta, b)


def pair_seed(seed: int, k: int) -> int:
    """Independent, reproducible RANSAC seed for pair ``k``."""
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def register_sequence(
    series: TimeSeries, cfg: PipelineConfig = PipelineConfig(), seed: int = 0, threads: int = 1
) -> SequenceAlignment:
    """Express every frame in the first frame's coordinates.

    Pairs are independent and may run on ``threads`` workers; the composition
    that follows is sequential, so the output does not depend on scheduling.
    """
    notes = []
    gap = series.mean_interval_days()
    if gap >= cfg.cadence_max_days:
        msg = f"average interval {gap:.2f} days is not below {cfg.cadence_max_days} days"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)

    frames = [load_frame(e, cfg) for e in series.entries]
    prev_policy = cfg.reference_policy is ReferencePolicy.PREVIOUS_FRAME
    jobs = [(k, k - 1 if prev_policy else 0) for k in range(1, len(frames))]

    def run(job: tuple[int, int]) -> PairResult | Exception:
        k, r = job
        try:
            return register_pair(frames[k], frames[r], cfg, seed=pair_seed(seed, k))
        except (StageError, ValueError, RegistrationError) as exc:
            return exc

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    world = cfg.world_transform
    first = series.entries[0]
    zero = DeformationField.from_magnitudes(np.zeros(len(frames[0])))
    entries = [
        AlignmentEntry(first.timestamp, first.label, world, 0.0, zero,
                       _constraint(None, world, zero, cfg))
    ]
    chain = RigidTransform()
    for (k, _), res in zip(jobs, results):
        if isinstance(res, Exception):
            partial = SequenceAlignment(entries, first.label, cfg.reference_policy, notes)
            raise SequenceError(k, res, partial)
        chain = compose(chain, res.transform) if prev_policy else res.transform
        t = compose(world, chain)
        e = series.entries[k]
        entries.append(
            AlignmentEntry(e.timestamp, e.label, t, res.loss, res.deformation,
                           _constraint(entries[-1].transform, t, res.deformation, cfg), res.fitness)
        )
    return SequenceAlignment(entries, first.label, cfg.reference_policy, notes)


@dataclass(frozen=True)
class ConstraintSummary:
    reports: tuple[ConstraintReport, ...]

    @property
    def alpha_violations(self) -> list[int]:
        return [i for i, r in enumerate(self.reports) if not r.alpha_ok]

    @property
    def beta_violations(self) -> list[int]:
        return [i for i, r in enumerate(self.reports) if not r.beta_ok]

    @property
    def all_ok(self) -> bool:
        return not self.alpha_violations and not self.beta_violations

    def to_dict(self) -> dict:
        return {
            "all_ok": self.all_ok,
            "alpha_violations": self.alpha_violations,
            "beta_violations": self.beta_violations,
            "reports": [vars(r) for r in self.reports],
        }


def check_constraints(alignment: SequenceAlignment, cfg: PipelineConfig = PipelineConfig()) -> ConstraintSummary:
    """Re-evaluate both bounds for every entry from the stored transforms and residual summaries."""
    reports = []
    prev = None
    for e in alignment.entries:
        reports.append(_constraint(prev, e.transform, e.deformation, cfg))
        prev = e.transform
    return ConstraintSummary(tuple(reports))
