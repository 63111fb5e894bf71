"""Descriptor matching and robust 7-DOF similarity-transform consensus.

Nearest-neighbor matching uses Hamming distance for binary descriptors and
Euclidean distance on rank vectors otherwise. Per-match transform hypotheses
vote into a coarse accumulator over (log scale, rotation, translation); the
densest cell seeds a least-squares refinement and defines the inlier set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoConsensusError, ParameterError
from .orient import OrientationFrame, icosphere_directions

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint16)


@dataclass(frozen=True)
class Match:
    index_a: int
    index_b: int
    distance: float
    second_distance: float


@dataclass(frozen=True)
class SimilarityTransform7DOF:
    """x -> scale * R @ x + t with isotropic scale and proper rotation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ParameterError(f"scale must be > 0, got {self.scale}")
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        rot.setflags(write=False)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = self.scale * (pts @ self.rotation.T) + self.translation
        return out[0] if np.asarray(points).ndim == 1 else out

    @staticmethod
    def identity() -> "SimilarityTransform7DOF":
        return SimilarityTransform7DOF(1.0, np.eye(3), np.zeros(3))


def rotation_angle_deg(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in degrees."""
    c = (np.trace(r) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def hamming_distances(a_packed: np.ndarray, b_packed: np.ndarray) -> np.ndarray:
    """Pairwise popcount distances between packed uint8 bit rows."""
    xor = np.bitwise_xor(a_packed[:, None, :], b_packed[None, :, :])
    return _POPCOUNT[xor].sum(axis=2).astype(np.float64)


def euclidean_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    d2 = (
        np.sum(a64 * a64, axis=1)[:, None]
        + np.sum(b64 * b64, axis=1)[None, :]
        - 2.0 * (a64 @ b64.T)
    )
    return np.sqrt(np.maximum(d2, 0.0))


def nearest_neighbor_matches(
    a: np.ndarray,
    b: np.ndarray,
    ratio_max: float = 0.9,
    metric: str = "euclidean",
    workers: int = 1,
) -> list[Match]:
    """For every row of ``a``: nearest and second-nearest row of ``b``.

    A match survives when distance <= ratio_max * second_distance. Ties break
    to the lower index. ``metric`` is "hamming" (packed bits) or "euclidean".
    """
    if metric not in ("hamming", "euclidean"):
        raise ParameterError(f"unknown metric {metric!r}")
    if not 0 < ratio_max <= 1:
        raise ParameterError(f"ratio_max must be in (0, 1], got {ratio_max}")
    if len(b) < 2:
        raise ParameterError(f"need at least 2 reference descriptors, got {len(b)}")
    if len(a) == 0:
        return []

    dist_fn = hamming_distances if metric == "hamming" else euclidean_distances
    matches: list[Match | None] = [None] * len(a)

    def run(start: int, stop: int) -> None:
        d = dist_fn(a[start:stop], b)
        nearest = np.argmin(d, axis=1)
        rows = np.arange(stop - start)
        d1 = d[rows, nearest]
        two = np.partition(d, 1, axis=1)[:, :2]
        d2 = np.where(two[:, 0] == d1, two[:, 1], two[:, 0])
        # Equal-distance ties: partition may return d1 twice; second stays d1.
        d2 = np.maximum(d2, d1)
        for i in rows:
            if d1[i] <= ratio_max * d2[i]:
                matches[start + i] = Match(start + int(i), int(nearest[i]), float(d1[i]), float(d2[i]))

    from .parallel import run_ranges

    run_ranges(len(a), run, workers)
    return [m for m in matches if m is not None]


def vote_transform(
    kp_a, frame_a: OrientationFrame, kp_b, frame_b: OrientationFrame
) -> SimilarityTransform7DOF:
    """Unique similarity mapping keypoint a's scale/frame/position onto b's."""
    scale = kp_b.sigma / kp_a.sigma
    rotation = frame_b.rotation @ frame_a.rotation.T
    xa = np.asarray(kp_a.position, dtype=np.float64)
    xb = np.asarray(kp_b.position, dtype=np.float64)
    translation = xb - scale * rotation @ xa
    return SimilarityTransform7DOF(scale, rotation, translation)


def similarity_from_correspondences(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform7DOF:
    """Least-squares similarity (Umeyama closed form) mapping src points to dst."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ParameterError("correspondences must be matching (N, 3) arrays")
    n = len(src)
    if n < 3:
        raise ParameterError(f"need at least 3 correspondences, got {n}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    ds = src - mu_s
    dd = dst - mu_d
    cov = dd.T @ ds / n
    u, s, vt = np.linalg.svd(cov)
    sign = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2, 2] = -1.0
    rotation = u @ sign @ vt
    var_s = (ds * ds).sum() / n
    if var_s <= 0:
        raise ParameterError("degenerate correspondences: zero spread")
    scale = float((s * sign.diagonal()).sum() / var_s)
    if scale <= 0:
        raise ParameterError("degenerate correspondences: non-positive scale")
    translation = mu_d - scale * rotation @ mu_s
    return SimilarityTransform7DOF(scale, rotation, translation)


@dataclass
class HoughSettings:
    """Accumulator granularity and inlier tolerances for transform consensus."""

    log_scale_bin: float = 0.2
    trans_bin: float = 16.0
    min_votes: int = 3
    log_scale_tol: float = 0.25
    rot_tol_deg: float = 30.0
    trans_tol: float = 10.0


@dataclass
class ConsensusResult:
    transform: SimilarityTransform7DOF
    inliers: list[Match] = field(default_factory=list)
    cell_votes: int = 0


def _rotation_bins(rotation: np.ndarray, directions: np.ndarray) -> list[tuple[int, int]]:
    """Coarse rotation bins: nearest directions for R@ex crossed with in-plane sectors.

    Returns the two nearest directions x the two nearest 45-degree sectors, so
    votes straddling a cell boundary still meet in a shared cell.
    """
    u = rotation @ np.array([1.0, 0.0, 0.0])
    dots = directions @ u
    near = np.argsort(-dots)[:2]
    bins = []
    for dir_idx in near:
        d = directions[dir_idx]
        ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
        b1 = ref - np.dot(ref, d) * d
        b1 /= np.linalg.norm(b1)
        b2 = np.cross(d, b1)
        v = rotation @ np.array([0.0, 1.0, 0.0])
        angle = math.atan2(float(np.dot(v, b2)), float(np.dot(v, b1))) % (2.0 * math.pi)
        frac = angle / (2.0 * math.pi) * 8
        sector = int(frac) % 8
        neighbor = (sector + (1 if frac - int(frac) >= 0.5 else -1)) % 8
        bins.append((int(dir_idx), sector))
        bins.append((int(dir_idx), neighbor))
    return bins


def _agrees(
    candidate: SimilarityTransform7DOF,
    x_a: np.ndarray,
    x_b: np.ndarray,
    consensus: SimilarityTransform7DOF,
    s: HoughSettings,
) -> bool:
    if abs(math.log(candidate.scale) - math.log(consensus.scale)) > s.log_scale_tol:
        return False
    if rotation_angle_deg(candidate.rotation @ consensus.rotation.T) > s.rot_tol_deg:
        return False
    # The per-match transform maps x_a to x_b exactly, so the translation
    # disagreement of the two transforms, evaluated at the match, is the
    # consensus residual at that keypoint.
    return bool(np.linalg.norm(x_b - consensus.apply(x_a)) <= s.trans_tol)


def hough_consensus(
    matches: list[Match],
    pairs_a,
    pairs_b,
    settings: HoughSettings | None = None,
) -> ConsensusResult:
    """Vote per-match transforms into a coarse accumulator; refine the densest cell.

    ``pairs_a``/``pairs_b`` are the (keypoint, frame) sequences the match indices
    refer to. Raises NoConsensusError when no cell reaches ``min_votes``.
    """
    if not matches:
        raise ParameterError("need at least one match")
    s = settings or HoughSettings()
    directions = icosphere_directions()

    votes: list[SimilarityTransform7DOF] = []
    cells: dict[tuple, list[int]] = {}
    for mi, m in enumerate(matches):
        kp_a, frame_a = pairs_a[m.index_a]
        kp_b, frame_b = pairs_b[m.index_b]
        t = vote_transform(kp_a, frame_a, kp_b, frame_b)
        votes.append(t)
        # Smear each vote over neighboring cells (half-bin shifts in scale and
        # translation, adjacent rotation cells) so clusters sitting on a bin
        # boundary are not split; a match still counts at most once per cell.
        rot_bins = set(_rotation_bins(t.rotation, directions))
        log_s = math.log(t.scale)
        scale_bins = {
            int(math.floor((log_s - s.log_scale_bin / 2) / s.log_scale_bin)),
            int(math.floor((log_s + s.log_scale_bin / 2) / s.log_scale_bin)),
        }
        trans_bins = [
            {
                int(math.floor((t.translation[axis] - s.trans_bin / 2) / s.trans_bin)),
                int(math.floor((t.translation[axis] + s.trans_bin / 2) / s.trans_bin)),
            }
            for axis in range(3)
        ]
        for sb in scale_bins:
            for rb in rot_bins:
                for tx in trans_bins[0]:
                    for ty in trans_bins[1]:
                        for tz in trans_bins[2]:
                            cells.setdefault((sb, *rb, tx, ty, tz), []).append(mi)

    candidates = sorted(cells, key=lambda k: (-len(cells[k]), k))
    if len(cells[candidates[0]]) < s.min_votes:
        raise NoConsensusError(
            f"densest cell has {len(cells[candidates[0]])} votes; {s.min_votes} required"
        )

    src_pts = np.array([pairs_a[m.index_a][0].position for m in matches], dtype=np.float64)
    dst_pts = np.array([pairs_b[m.index_b][0].position for m in matches], dtype=np.float64)

    def refine(indices: list[int]) -> SimilarityTransform7DOF:
        if len(indices) < 3:
            return votes[indices[0]]
        # Multiple frames of one keypoint pair repeat the same correspondence;
        # deduplicate so repeated points do not dominate the fit.
        unique = {
            (matches[i].index_a, matches[i].index_b): i for i in indices
        }
        idx = sorted(unique.values())
        if len(idx) < 3:
            idx = indices
        try:
            return similarity_from_correspondences(src_pts[idx], dst_pts[idx])
        except ParameterError:
            return votes[indices[0]]

    def agreeing(consensus: SimilarityTransform7DOF) -> list[int]:
        return [
            i for i, t in enumerate(votes) if _agrees(t, src_pts[i], dst_pts[i], consensus, s)
        ]

    def evaluate(cell: list[int]) -> tuple[SimilarityTransform7DOF, list[int]]:
        consensus = refine(cell)
        inlier_idx = agreeing(consensus)
        # Polish over the full inlier set: the winning cell alone can be small
        # and spatially clustered, leaving the least-squares fit ill-conditioned.
        for _ in range(3):
            if len(inlier_idx) < 3:
                break
            consensus = refine(inlier_idx)
            updated = agreeing(consensus)
            if updated == inlier_idx:
                break
            inlier_idx = updated
        # Report a residual-trimmed fit: marginal inliers near the tolerance
        # edge otherwise drag the least-squares solution.
        if len(inlier_idx) >= 3:
            for tol in (s.trans_tol / 2, s.trans_tol / 4):
                tight = [
                    i
                    for i in inlier_idx
                    if np.linalg.norm(dst_pts[i] - consensus.apply(src_pts[i])) <= tol
                ]
                distinct = {(matches[i].index_a, matches[i].index_b) for i in tight}
                if len(distinct) < 4:
                    break
                consensus = refine(tight)
        return consensus, inlier_idx

    best: tuple[SimilarityTransform7DOF, list[int]] | None = None
    best_cell = 0
    seen: set[frozenset] = set()
    for key in candidates:
        if len(cells[key]) < s.min_votes or len(seen) >= 16:
            break
        # Smearing aliases one vote cluster into many cells; evaluate each
        # distinct cluster once.
        cluster = frozenset(cells[key])
        if cluster in seen:
            continue
        seen.add(cluster)
        consensus, inlier_idx = evaluate(cells[key])
        if best is None or len(inlier_idx) > len(best[1]):
            best = (consensus, inlier_idx)
            best_cell = len(cells[key])
    assert best is not None
    return ConsensusResult(best[0], [matches[i] for i in best[1]], best_cell)


def settings_from_config(config) -> HoughSettings:
    return HoughSettings(
        log_scale_bin=config.log_scale_bin,
        trans_bin=config.trans_bin,
        min_votes=config.min_votes,
        log_scale_tol=config.log_scale_tol,
        rot_tol_deg=config.rot_tol_deg,
        trans_tol=config.trans_tol,
    )


def match_records(records_a, records_b, config) -> tuple[ConsensusResult, list[Match], str]:
    """Descriptor matching plus consensus between two extraction record lists."""
    from .descriptor import descriptor_array

    kind = config.descriptor
    a = descriptor_array(records_a, kind)
    b = descriptor_array(records_b, kind)
    metric = "hamming" if kind == "brief" else "euclidean"
    matches = nearest_neighbor_matches(a, b, config.ratio_max, metric, config.workers)
    if not matches:
        raise NoConsensusError("no descriptor matches survived the ratio test")
    pairs_a = [(r.keypoint, r.frame) for r in records_a]
    pairs_b = [(r.keypoint, r.frame) for r in records_b]
    result = hough_consensus(matches, pairs_a, pairs_b, settings_from_config(config))
    return result, matches, kind


def count_inlier_matches(volume_a, volume_b, config=None) -> tuple[int, dict]:
    """Full pipeline on both volumes, then inlier count under the consensus.

    The report treats the count as per volume pair (not summed over trials).
    """
    from .config import PipelineConfig
    from .pipeline import extract_features

    cfg = config or PipelineConfig()
    res_a = extract_features(volume_a, cfg)
    res_b = extract_features(volume_b, cfg)
    consensus, matches, kind = match_records(res_a.records, res_b.records, cfg)
    report = {
        "kind": kind,
        "descriptors_a": len(res_a.records),
        "descriptors_b": len(res_b.records),
        "matches": len(matches),
        "inliers": len(consensus.inliers),
        "consensus_scale": consensus.transform.scale,
        "consensus_rotation_deg": rotation_angle_deg(consensus.transform.rotation),
        "consensus_translation": consensus.transform.translation.tolist(),
        "transform": consensus.transform,
    }
    return len(consensus.inliers), report
