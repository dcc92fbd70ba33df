"""Global alignment from feature correspondences.

Descriptor matching produces putative pairs, RANSAC finds a consistent rigid
model among them, and a Geman-McClure refinement with graduated
non-convexity polishes the estimate on the surviving pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from .geometry import PointCloud, RigidTransform, SigmaWeights, cloud_diameter, compose, kabsch, relative_magnitude
from .spatial import average_spacing
from .result import ConvergedBy, RegistrationError, RegistrationResult

_BATCH = 256


@dataclass(frozen=True)
class CorrespondenceSet:
    pairs: NDArray[np.intp]  # (m, 2): source index, target index
    scores: NDArray[np.float64]

    def __post_init__(self) -> None:
        pairs = np.asarray(self.pairs, dtype=np.intp).reshape(-1, 2)
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(scores) != len(pairs):
            raise ValueError("scores and pairs differ in length")
        if len(np.unique(pairs[:, 0])) != len(pairs):
            raise ValueError("correspondences must be unique on source index")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.pairs)

    def subset(self, rows: ArrayLike) -> CorrespondenceSet:
        return CorrespondenceSet(self.pairs[rows], self.scores[rows])


def match_features(
    src_desc: ArrayLike, tgt_desc: ArrayLike, mutual: bool = False
) -> CorrespondenceSet:
    """Nearest target descriptor (L2) for every source descriptor.

    Equidistant targets resolve to the lowest index. With ``mutual`` only
    reciprocal nearest pairs are kept.
    """
    src_desc = np.asarray(src_desc, dtype=np.float64)
    tgt_desc = np.asarray(tgt_desc, dtype=np.float64)
    if len(src_desc) == 0 or len(tgt_desc) == 0:
        raise ValueError("descriptor lists must be nonempty")
    fwd, fwd_d = _nearest_lowest(src_desc, tgt_desc)
    src_idx = np.arange(len(src_desc))
    if mutual:
        back, _ = _nearest_lowest(tgt_desc, src_desc)
        keep = back[fwd] == src_idx
        src_idx, fwd, fwd_d = src_idx[keep], fwd[keep], fwd_d[keep]
    return CorrespondenceSet(np.stack([src_idx, fwd], axis=1), fwd_d)


def _nearest_lowest(
    queries: NDArray[np.float64], data: NDArray[np.float64], k_ties: int = 8
) -> tuple[NDArray[np.intp], NDArray[np.float64]]:
    tree = cKDTree(data)
    k = min(k_ties, len(data))
    d, i = tree.query(queries, k=k)
    if k == 1:
        d, i = d[:, None], i[:, None]
    # recompute exactly, then take the lowest index among the minimum distances
    exact = np.sqrt(np.sum((data[i] - queries[:, None, :]) ** 2, axis=2))
    best = exact.min(axis=1, keepdims=True)
    cand = np.where(exact == best, i, np.iinfo(np.intp).max)
    j = cand.min(axis=1)
    return j, best[:, 0]


def brute_match(src_desc: ArrayLike, tgt_desc: ArrayLike) -> NDArray[np.intp]:
    """O(n·m) reference for :func:`match_features` (first minimum wins)."""
    src_desc = np.asarray(src_desc, dtype=np.float64)
    tgt_desc = np.asarray(tgt_desc, dtype=np.float64)
    out = np.empty(len(src_desc), dtype=np.intp)
    for i, s in enumerate(src_desc):
        out[i] = int(np.argmin(np.sqrt(np.sum((tgt_desc - s) ** 2, axis=1))))
    return out


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 100_000
    sample_size: int = 4
    # None: 1.5x the average nearest-neighbour spacing of the target
    inlier_threshold: float | None = None
    edge_length_tolerance: float = 0.1
    confidence: float = 0.999
    rng_seed: int = 0
    sigma_weights: SigmaWeights = field(default_factory=SigmaWeights)
    alpha: float = 0.01

    def __post_init__(self) -> None:
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")
        if self.sample_size < 3:
            raise ValueError("sample_size must be >= 3")
        if self.inlier_threshold is not None and not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0 < self.edge_length_tolerance < 1:
            raise ValueError("edge_length_tolerance must be in (0, 1)")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must be in (0, 1)")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


def _required_iterations(inlier_ratio: float, sample_size: int, confidence: float) -> float:
    p = inlier_ratio**sample_size
    if p >= 1.0:
        return 1.0
    if p <= 0.0:
        return math.inf
    return math.ceil(math.log(1.0 - confidence) / math.log(1.0 - p))


def _draw_samples(rng: np.random.Generator, m: int, s: int, b: int) -> NDArray[np.intp]:
    samples = rng.integers(0, m, size=(b, s))
    srt = np.sort(samples, axis=1)
    dup = np.any(srt[:, 1:] == srt[:, :-1], axis=1)
    for row in np.flatnonzero(dup):
        samples[row] = rng.choice(m, s, replace=False)
    return samples


def _batched_kabsch(
    a: NDArray[np.float64], b: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Kabsch for a batch of point sets: (B, s, 3) -> R (B, 3, 3), t (B, 3)."""
    ma = a.mean(axis=1)
    mb = b.mean(axis=1)
    h = np.einsum("bki,bkj->bij", a - ma[:, None], b - mb[:, None])
    u, _, vt = np.linalg.svd(h)
    v = np.swapaxes(vt, 1, 2)
    ut = np.swapaxes(u, 1, 2)
    d = np.sign(np.linalg.det(v @ ut))
    d[d == 0] = 1.0
    v[:, :, 2] *= d[:, None]
    r = v @ ut
    t = mb - np.einsum("bij,bj->bi", r, ma)
    return r, t


def _edge_consistent(a: NDArray[np.float64], b: NDArray[np.float64], tol: float) -> NDArray[np.bool_]:
    ok = np.ones(len(a), dtype=bool)
    for i, j in combinations(range(a.shape[1]), 2):
        da = np.linalg.norm(a[:, i] - a[:, j], axis=1)
        db = np.linalg.norm(b[:, i] - b[:, j], axis=1)
        longest = np.maximum(da, db)
        with np.errstate(invalid="ignore", divide="ignore"):
            ok &= (longest > 0) & (np.abs(da - db) / longest <= tol)
    return ok


def _score(
    transform: RigidTransform, s: NDArray[np.float64], t: NDArray[np.float64], thr: float
) -> tuple[NDArray[np.intp], float]:
    res = np.linalg.norm(transform.apply_points(s) - t, axis=1)
    inl = np.flatnonzero(res <= thr)
    rmse = float(np.sqrt(np.mean(res[inl] ** 2))) if len(inl) else math.inf
    return inl, rmse


def ransac_align(
    src: PointCloud, tgt: PointCloud, corr: CorrespondenceSet, cfg: RansacConfig = RansacConfig()
) -> RegistrationResult:
    """Robust rigid fit over putative correspondences.

    Samples are drawn from a seeded generator in fixed-size batches and scored
    in draw order, so the result only depends on the inputs and the seed.
    Stops when a new best model lies within ``alpha`` of the previous best,
    when the usual confidence bound is met, or at ``max_iterations``.
    """
    m = len(corr)
    if m < cfg.sample_size:
        raise ValueError(f"need at least {cfg.sample_size} correspondences, got {m}")
    s_all = src.points[corr.pairs[:, 0]]
    t_all = tgt.points[corr.pairs[:, 1]]
    thr = cfg.inlier_threshold
    if thr is None:
        thr = 1.5 * average_spacing(tgt)
    rng = np.random.default_rng(cfg.rng_seed)

    best: RigidTransform | None = None
    best_count, best_rmse = -1, math.inf
    history: list[int] = []
    needed = math.inf
    it = 0
    stop = ConvergedBy.MAX_ITERATIONS
    done = False
    while not done and it < cfg.max_iterations:
        b = min(_BATCH, cfg.max_iterations - it)
        samples = _draw_samples(rng, m, cfg.sample_size, b)
        a, bb = s_all[samples], t_all[samples]
        valid = _edge_consistent(a, bb, cfg.edge_length_tolerance)
        rot, trans = _batched_kabsch(a, bb)
        moved = np.einsum("bij,mj->bmi", rot, s_all) + trans[:, None, :]
        res = np.linalg.norm(moved - t_all[None], axis=2)
        inl = res <= thr
        counts = inl.sum(axis=1)
        sq = np.where(inl, res**2, 0.0).sum(axis=1)
        for k in range(b):
            it += 1
            if valid[k]:
                c = int(counts[k])
                rmse = math.sqrt(sq[k] / c) if c else math.inf
                if c > best_count or (c == best_count and rmse < best_rmse):
                    cand = RigidTransform(rot[k], trans[k])
                    prev = best
                    best, best_count, best_rmse = cand, c, rmse
                    needed = _required_iterations(c / m, cfg.sample_size, cfg.confidence)
                    if prev is not None and relative_magnitude(cand, prev, cfg.sigma_weights) <= cfg.alpha:
                        stop, done = ConvergedBy.ALPHA_BOUND, True
            history.append(best_count)
            if done:
                break
            if best is not None and it >= needed:
                stop, done = ConvergedBy.CONFIDENCE, True
                break
    if best is None:
        raise RegistrationError("ransac found no consistent sample", stage="ransac")

    inl, _ = _score(best, s_all, t_all, thr)
    final = best
    if len(inl) >= 3:
        refit = kabsch(s_all[inl], t_all[inl])
        refit_inl, _ = _score(refit, s_all, t_all, thr)
        if len(refit_inl) >= len(inl):
            final = refit
    inl, rmse = _score(final, s_all, t_all, thr)
    return RegistrationResult(
        transform=final,
        inlier_count=len(inl),
        inlier_rmse=rmse if len(inl) else 0.0,
        fitness=len(inl) / len(src),
        iterations_used=it,
        converged_by=stop,
        inliers=inl,
        history=history,
    )


@dataclass(frozen=True)
class FgrConfig:
    max_iterations: int = 200
    mu_init_factor: float = 1.0
    mu_divisor: float = 1.4
    mu_update_period: int = 4
    # None: square of the caller's inlier threshold (or 1e-6 when unknown)
    mu_floor: float | None = None
    step_tolerance: float = 1e-12

    def __post_init__(self) -> None:
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")
        if not self.mu_init_factor > 0:
            raise ValueError("mu_init_factor must be positive")
        if not self.mu_divisor > 1:
            raise ValueError("mu_divisor must exceed 1")
        if self.mu_update_period < 1:
            raise ValueError("mu_update_period must be >= 1")
        if self.mu_floor is not None and not self.mu_floor > 0:
            raise ValueError("mu_floor must be positive")


def geman_mcclure(r2: NDArray[np.float64], mu: float) -> NDArray[np.float64]:
    return mu * r2 / (mu + r2)


def fgr_objective(
    transform: RigidTransform, s: NDArray[np.float64], t: NDArray[np.float64], mu: float
) -> float:
    r2 = np.sum((transform.apply_points(s) - t) ** 2, axis=1)
    return float(np.sum(geman_mcclure(r2, mu)))


def fgr_refine(
    src: PointCloud,
    tgt: PointCloud,
    corr: CorrespondenceSet,
    init: RigidTransform,
    cfg: FgrConfig = FgrConfig(),
) -> RegistrationResult:
    """Minimise the Geman-McClure penalty over SE(3) with graduated non-convexity.

    Each step solves the line-process weighted least squares, weights
    ``(mu / (mu + r^2))^2``, in closed form (weighted Procrustes), which never
    increases the objective at fixed ``mu``. ``mu`` starts at
    ``mu_init_factor * diameter^2`` and is divided by ``mu_divisor`` every
    ``mu_update_period`` steps until it reaches ``mu_floor``.
    """
    if len(corr) == 0:
        raise ValueError("no correspondences to refine")
    s = src.points[corr.pairs[:, 0]]
    t = tgt.points[corr.pairs[:, 1]]
    floor = cfg.mu_floor if cfg.mu_floor is not None else 1e-6
    mu = max(cfg.mu_init_factor * cloud_diameter(tgt) ** 2, floor)
    current = init
    history: list[tuple[float, float]] = [(mu, fgr_objective(current, s, t, mu))]
    stop = ConvergedBy.MAX_ITERATIONS
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        moved = current.apply_points(s)
        r2 = np.sum((moved - t) ** 2, axis=1)
        if not np.all(np.isfinite(r2)):
            raise RegistrationError("divergent refinement", current, stage="fgr")
        w = (mu / (mu + r2)) ** 2
        if w.sum() <= 0:
            break
        step = kabsch(moved, t, w)
        nxt = compose(step, current)
        if not (np.all(np.isfinite(nxt.rotation)) and np.all(np.isfinite(nxt.translation))):
            raise RegistrationError("divergent refinement", current, stage="fgr")
        current = nxt
        history.append((mu, fgr_objective(current, s, t, mu)))
        at_floor = mu <= floor
        if at_floor and relative_magnitude(step, RigidTransform()) < cfg.step_tolerance:
            stop = ConvergedBy.TOLERANCE
            break
        if it % cfg.mu_update_period == 0 and not at_floor:
            mu = max(mu / cfg.mu_divisor, floor)
            history.append((mu, fgr_objective(current, s, t, mu)))

    thr = math.sqrt(floor)
    inl, rmse = _score(current, s, t, thr)
    return RegistrationResult(
        transform=current,
        inlier_count=len(inl),
        inlier_rmse=rmse if len(inl) else 0.0,
        fitness=len(inl) / len(src),
        iterations_used=it,
        converged_by=stop,
        inliers=inl,
        history=history,
    )
