"""Human point-set extraction from a lidar frame and a detection box.

Pipeline (fixed order): box projection -> background removal -> statistical
outlier rejection -> floor-plane removal -> DBSCAN -> largest cluster.

Boxes live in the 1024x256 detector image; rows are mapped back to the
native 32-row grid by the resize factor (8). Point clouds here are in the
destaggered pixel layout.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import AnnotationParseError, PreconditionError
from .lidar_frames import (
    NATIVE_HEIGHT,
    RESIZED_HEIGHT,
    LidarFrame,
    PointCloud,
    destagger,
    to_point_cloud,
)

RESIZE_FACTOR = RESIZED_HEIGHT // NATIVE_HEIGHT
NOISE = -1


@dataclass(frozen=True)
class PerceptionConfig:
    dbscan_eps: float = 0.12  # m
    dbscan_min_pts: int = 8
    # eps grows to this multiple of the gap between adjacent beam rows at the
    # cluster's median range, so far bodies stay connected across rows; 0 disables
    dbscan_row_gap_factor: float = 2.0
    plane_threshold: float = 0.02  # m
    plane_iterations: int = 200
    background_delta: float = 0.10  # m
    background_frames: int = 50
    outlier_k: int = 10
    outlier_std_ratio: float = 2.5
    floor_max_tilt_deg: float = 15.0
    # a plane seen by fewer beam rows is a single scan ring, not a floor patch
    floor_min_rows: int = 3
    resize_factor: int = RESIZE_FACTOR
    seed: int = 0


@dataclass(frozen=True)
class BoundingBox:
    """COCO-style box: top-left ``(x, y)`` plus width and height, in pixels."""

    x: float
    y: float
    w: float
    h: float
    confidence: float = 1.0
    class_id: int = 0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box width and height must be positive, got {self.w} x {self.h}")

    def clamped(self, width, height) -> "BoundingBox | None":
        """Intersection with the image, or None if nothing is left."""
        x0, y0 = max(self.x, 0), max(self.y, 0)
        x1, y1 = min(self.x + self.w, width), min(self.y + self.h, height)
        if x1 <= x0 or y1 <= y0:
            return None
        return BoundingBox(x0, y0, x1 - x0, y1 - y0, self.confidence, self.class_id)


@dataclass(frozen=True)
class BackgroundModel:
    range_m: np.ndarray  # (H, W) reference range per pixel
    valid: np.ndarray  # (H, W) False where the pixel is a persistent hole


@dataclass(frozen=True)
class HumanPointSet:
    cloud: PointCloud
    source_box: BoundingBox
    frame_timestamp: int

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points

    def __len__(self):
        return len(self.cloud)


@dataclass(frozen=True)
class HumanNotFound:
    """No human left after ``stage``; the controller must fall back to a safe stop."""

    stage: str
    frame_timestamp: int = 0

    def __bool__(self):
        return False


def _destaggered(frame: LidarFrame) -> LidarFrame:
    return destagger(frame) if frame.staggered else frame


def build_background(frames: Sequence[LidarFrame], n: int | None = None) -> BackgroundModel:
    """Per-pixel median range over the first ``n`` frames of a static scene.

    Zero-range returns are ignored by the median; a pixel is invalid when at
    least half of its returns are zero.
    """
    frames = list(frames)[: (len(frames) if n is None else n)]
    if not frames:
        raise PreconditionError("background model needs at least one frame")
    stack = np.stack([_destaggered(f).channels["range"].pixels.astype(np.float64) * f.range_unit
                      for f in frames])
    holes = stack == 0
    valid = holes.sum(axis=0) * 2 < len(frames)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-hole pixels
        med = np.nanmedian(np.where(holes, np.nan, stack), axis=0)
    med = np.where(valid, med, 0.0)
    return BackgroundModel(med, valid)


def remove_background(cloud: PointCloud, model: BackgroundModel, delta: float) -> PointCloud:
    """Keep points whose range differs from the background by more than ``delta``.

    Points on invalid background pixels are always kept.
    """
    ref = model.range_m[cloud.rows, cloud.cols]
    ok = model.valid[cloud.rows, cloud.cols]
    keep = ~ok | (np.abs(cloud.ranges - ref) > delta)
    return cloud.subset(np.flatnonzero(keep))


def reject_outliers(cloud: PointCloud, k: int = 10, std_ratio: float = 1.0) -> PointCloud:
    """Statistical outlier removal on mean k-nearest-neighbour distance."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(cloud) <= k:
        return cloud
    dist, _ = cKDTree(cloud.points).query(cloud.points, k=k + 1)
    mean_d = dist[:, 1:].mean(axis=1)
    limit = mean_d.mean() + std_ratio * mean_d.std()
    return cloud.subset(np.flatnonzero(mean_d <= limit))


def scale_box_rows(box: BoundingBox, factor: int = RESIZE_FACTOR) -> tuple[int, int]:
    """Native row span ``[r0, r1)`` covered by a box drawn on the upscaled image."""
    r0 = int(box.y) // factor
    r1 = -(-int(math.ceil(box.y + box.h)) // factor)
    return r0, r1


def project_box_to_cloud(frame: LidarFrame, box: BoundingBox,
                         resize_factor: int = RESIZE_FACTOR) -> PointCloud:
    """Points whose destaggered source pixel falls inside the box."""
    frame = _destaggered(frame)
    cloud = to_point_cloud(frame)
    clamped = box.clamped(frame.width, frame.height * resize_factor)
    if clamped is None:
        return cloud.subset(np.zeros(0, dtype=np.int64))
    r0, r1 = scale_box_rows(clamped, resize_factor)
    c0 = int(math.floor(clamped.x))
    c1 = int(math.ceil(clamped.x + clamped.w))
    inside = (cloud.rows >= r0) & (cloud.rows < r1) & (cloud.cols >= c0) & (cloud.cols < c1)
    return cloud.subset(np.flatnonzero(inside))


def _as_points(cloud) -> np.ndarray:
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)


def segment_plane(cloud, dist_threshold: float = 0.02, iterations: int = 200, seed: int = 0):
    """RANSAC plane fit.

    Returns
    -------
    plane : ndarray, shape (4,)
        ``(a, b, c, d)`` with unit normal ``(a, b, c)`` (``c >= 0``) and
        ``a x + b y + c z + d = 0``.
    inliers : ndarray of int
        Indices of points within ``dist_threshold`` of the plane.
    """
    pts = _as_points(cloud)
    n = len(pts)
    if n < 3:
        raise PreconditionError(f"plane fit needs at least 3 points, got {n}")
    rng = np.random.default_rng(seed)
    if n == 3:
        samples = np.array([[0, 1, 2]])
    else:
        samples = rng.integers(0, n, size=(iterations, 3))
    p0, p1, p2 = pts[samples[:, 0]], pts[samples[:, 1]], pts[samples[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    lens = np.linalg.norm(normals, axis=1)
    scale = np.linalg.norm(p1 - p0, axis=1) * np.linalg.norm(p2 - p0, axis=1)
    good = lens > 1e-9 * np.maximum(scale, 1e-300)
    if not good.any():
        raise PreconditionError("no non-degenerate point triple found (points collinear?)")
    normals = normals[good] / lens[good, None]
    normals *= np.where(normals[:, 2:3] < 0, -1.0, 1.0)
    offsets = -np.einsum("ij,ij->i", normals, p0[good])
    dist = np.abs(pts @ normals.T + offsets)  # (n, candidates)
    counts = (dist <= dist_threshold).sum(axis=0)
    best = int(np.argmax(counts))
    plane = np.append(normals[best], offsets[best])
    return plane, np.flatnonzero(dist[:, best] <= dist_threshold)


def dbscan(cloud, eps: float = 0.12, min_pts: int = 8) -> np.ndarray:
    """Density-based clustering; returns one label per point, noise is -1.

    A point is core when its ``eps``-neighbourhood (itself included) holds at
    least ``min_pts`` points. Clusters are numbered in order of their first
    core point; a border point joins the first cluster that reaches it.
    """
    if not eps > 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    pts = _as_points(cloud)
    n = len(pts)
    labels = np.full(n, -2, dtype=np.int64)  # -2: unvisited
    if n == 0:
        return labels
    neighbours = cKDTree(pts).query_ball_point(pts, r=eps)
    core = np.array([len(nb) >= min_pts for nb in neighbours])
    cluster = 0
    for i in range(n):
        if labels[i] != -2:
            continue
        if not core[i]:
            labels[i] = NOISE
            continue
        labels[i] = cluster
        stack = list(neighbours[i])
        while stack:
            j = stack.pop()
            if labels[j] == NOISE:
                labels[j] = cluster
            if labels[j] != -2:
                continue
            labels[j] = cluster
            if core[j]:
                stack.extend(neighbours[j])
        cluster += 1
    return labels


def _is_floor(plane, rows, cfg: PerceptionConfig) -> bool:
    tilt_ok = abs(plane[2]) >= math.cos(math.radians(cfg.floor_max_tilt_deg))
    return tilt_ok and len(np.unique(rows)) >= cfg.floor_min_rows


def effective_eps(cloud: PointCloud, frame: LidarFrame, cfg: PerceptionConfig) -> float:
    """Clustering radius: ``cfg.dbscan_eps`` or the scaled beam-row gap, whichever is larger."""
    if cfg.dbscan_row_gap_factor <= 0 or frame.intrinsics is None or len(cloud) == 0:
        return cfg.dbscan_eps
    alt = np.deg2rad(frame.intrinsics.altitude_deg)
    if len(alt) < 2:
        return cfg.dbscan_eps
    step = float(np.median(np.abs(np.diff(alt))))
    gap = float(np.median(cloud.ranges)) * step
    return max(cfg.dbscan_eps, cfg.dbscan_row_gap_factor * gap)


def extract_human(frame: LidarFrame, box: BoundingBox, bg: BackgroundModel,
                  cfg: PerceptionConfig = PerceptionConfig()):
    """Points on the human inside ``box``, or :class:`HumanNotFound`."""
    ts = int(frame.frame_timestamp)
    cloud = project_box_to_cloud(frame, box, cfg.resize_factor)
    if len(cloud) == 0:
        return HumanNotFound("projection", ts)
    cloud = remove_background(cloud, bg, cfg.background_delta)
    if len(cloud) == 0:
        return HumanNotFound("background", ts)
    cloud = reject_outliers(cloud, cfg.outlier_k, cfg.outlier_std_ratio)
    if len(cloud) >= 3:
        try:
            plane, inliers = segment_plane(cloud, cfg.plane_threshold, cfg.plane_iterations, cfg.seed)
        except PreconditionError:
            inliers = None
        if inliers is not None and _is_floor(plane, cloud.rows[inliers], cfg):
            cloud = cloud.subset(np.setdiff1d(np.arange(len(cloud)), inliers))
    if len(cloud) == 0:
        return HumanNotFound("plane", ts)
    labels = dbscan(cloud, effective_eps(cloud, frame, cfg), cfg.dbscan_min_pts)
    if not np.any(labels >= 0):
        return HumanNotFound("clustering", ts)
    sizes = np.bincount(labels[labels >= 0])
    return HumanPointSet(cloud.subset(np.flatnonzero(labels == int(np.argmax(sizes)))), box, ts)


# --- annotations and detection providers ------------------------------------

_LEADING_INT = re.compile(r"^(\d+)")


def load_annotations(path) -> dict[int, list[BoundingBox]]:
    """Read COCO JSON into ``{frame_index: [BoundingBox, ...]}``.

    The frame index is the leading integer of the image ``file_name`` (as in
    ``12_reflectivity.png``), falling back to the image ``id``.
    """
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except OSError as exc:
        raise AnnotationParseError(f"{p}: cannot read ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise AnnotationParseError(f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    try:
        index_of = {}
        for img in data.get("images", []):
            m = _LEADING_INT.match(Path(str(img.get("file_name", ""))).name)
            index_of[img["id"]] = int(m.group(1)) if m else int(img["id"])
        boxes: dict[int, list[BoundingBox]] = {i: [] for i in index_of.values()}
        for ann in data["annotations"]:
            x, y, w, h = (float(v) for v in ann["bbox"])
            frame = index_of.get(ann["image_id"], int(ann["image_id"]))
            boxes.setdefault(frame, []).append(
                BoundingBox(x, y, w, h, float(ann.get("score", 1.0)), int(ann.get("category_id", 0))))
    except (KeyError, TypeError, ValueError) as exc:
        raise AnnotationParseError(f"{p}: malformed COCO annotation ({exc!r})") from exc
    return boxes


class DetectionProvider(Protocol):
    def detect(self, index: int, frame: LidarFrame) -> list[BoundingBox]: ...


class AnnotationReplay:
    """Returns exactly the stored boxes for each frame index."""

    mode = "annotation_replay"

    def __init__(self, boxes: dict[int, list[BoundingBox]]):
        self.boxes = boxes

    @classmethod
    def from_file(cls, path) -> "AnnotationReplay":
        return cls(load_annotations(path))

    def detect(self, index, frame=None):
        return list(self.boxes.get(index, []))


class SyntheticOracle:
    """Boxes from a ground-truth human pixel mask on the native destaggered grid."""

    mode = "synthetic_oracle"

    def __init__(self, mask_fn: Callable[[int, LidarFrame], np.ndarray],
                 resize_factor: int = RESIZE_FACTOR, pad: int = 1):
        self.mask_fn = mask_fn
        self.resize_factor = resize_factor
        self.pad = pad

    def detect(self, index, frame):
        mask = np.asarray(self.mask_fn(index, frame), dtype=bool)
        if not mask.any():
            return []
        return [box_from_mask(mask, self.resize_factor, self.pad)]


def box_from_mask(mask: np.ndarray, resize_factor: int = RESIZE_FACTOR, pad: int = 1) -> BoundingBox:
    """Tight box (plus ``pad`` native pixels) around a mask, in upscaled coordinates."""
    rows, cols = np.nonzero(mask)
    h, w = mask.shape
    r0, r1 = max(rows.min() - pad, 0), min(rows.max() + 1 + pad, h)
    c0, c1 = max(cols.min() - pad, 0), min(cols.max() + 1 + pad, w)
    return BoundingBox(float(c0), float(r0 * resize_factor), float(c1 - c0),
                       float((r1 - r0) * resize_factor))
