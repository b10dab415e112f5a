"""Lidar channel images, frame preprocessing and channel-similarity analysis.

A frame is four 2D images (range, signal, near-IR, reflectivity) sharing one
pixel grid. Row ``r`` of the raw (staggered) images holds measurement columns
in firing order; destaggering rolls each row by ``pixel_shift_by_row[r]`` so
that a destaggered column corresponds to (approximately) one azimuth.

Angle convention used for point-cloud reconstruction: measurement column ``m``
on row ``r`` looks along azimuth ``2*pi*m/W + azimuth_offset[r]`` (counter
clockwise from +x) and altitude ``altitude[r]`` (positive up). Range pixels are
integer counts of ``range_unit`` metres (millimetres by default); zero means no
return.

The preprocessing order is fixed: downsample -> resize -> auto-expose ->
equalize.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    DimensionMismatchError,
    MalformedMetadataError,
    PreconditionError,
    UnsupportedDownscaleError,
)

CHANNEL_KINDS = ("range", "signal", "near_ir", "reflectivity")
# Depth order of the stacked detector input.
STACK_ORDER = ("reflectivity", "signal", "near_ir")
IMAGE_CHANNELS = STACK_ORDER

NATIVE_WIDTH = 1024
NATIVE_HEIGHT = 32
RESIZED_HEIGHT = 256

AUTO_EXPOSE_PERCENTILES = (0.01, 0.99)
SSIM_WINDOW = 8
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


@dataclass(frozen=True)
class ChannelImage:
    pixels: np.ndarray
    bit_depth: int = 16
    channel_kind: str = "range"

    def __post_init__(self):
        if self.bit_depth not in (8, 16):
            raise ValueError(f"bit_depth must be 8 or 16, got {self.bit_depth}")
        if self.channel_kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel kind {self.channel_kind!r}")
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"pixels must be a 2D grid, got shape {px.shape}")
        if px.size and (px.min() < 0 or px.max() >= 2**self.bit_depth):
            raise ValueError(f"pixel values out of range for {self.bit_depth}-bit image")
        dtype = np.uint8 if self.bit_depth == 8 else np.uint16
        px = px.astype(dtype, copy=True)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def max_value(self) -> int:
        return 2**self.bit_depth - 1

    def with_pixels(self, pixels, bit_depth=None) -> "ChannelImage":
        return ChannelImage(pixels, bit_depth or self.bit_depth, self.channel_kind)


@dataclass(frozen=True)
class BeamIntrinsics:
    """Per-row beam angles in degrees."""

    altitude_deg: np.ndarray
    azimuth_deg: np.ndarray

    def __post_init__(self):
        alt = np.asarray(self.altitude_deg, dtype=float)
        az = np.asarray(self.azimuth_deg, dtype=float)
        if alt.shape != az.shape or alt.ndim != 1:
            raise MalformedMetadataError("beam altitude/azimuth tables must be equal-length 1D arrays")
        object.__setattr__(self, "altitude_deg", alt)
        object.__setattr__(self, "azimuth_deg", az)

    @classmethod
    def uniform(cls, height=NATIVE_HEIGHT, fov_deg=90.0, azimuth_deg=None):
        """Evenly spaced beams from +fov/2 (row 0) down to -fov/2."""
        alt = np.linspace(fov_deg / 2, -fov_deg / 2, height)
        az = np.zeros(height) if azimuth_deg is None else np.asarray(azimuth_deg, float)
        return cls(alt, az)


@dataclass(frozen=True)
class LidarFrame:
    channels: Mapping[str, ChannelImage]
    column_timestamps: np.ndarray
    pixel_shift_by_row: np.ndarray
    frame_timestamp: int = 0
    staggered: bool = True
    intrinsics: BeamIntrinsics | None = None
    range_unit: float = 0.001

    def __post_init__(self):
        if not self.channels:
            raise ValueError("frame has no channels")
        shapes = {k: img.pixels.shape for k, img in self.channels.items()}
        first = next(iter(shapes.values()))
        for kind, shape in shapes.items():
            if shape != first:
                raise DimensionMismatchError(
                    f"channel {kind!r} has shape {shape}, expected {first}")
        height, width = first
        shifts = np.asarray(self.pixel_shift_by_row, dtype=np.int64)
        if shifts.ndim != 1 or len(shifts) != height:
            raise MalformedMetadataError(
                f"pixel_shift_by_row has {shifts.size} entries, frame height is {height}")
        ts = np.asarray(self.column_timestamps, dtype=np.int64)
        if ts.shape != (width,):
            raise MalformedMetadataError(
                f"column_timestamps has {ts.size} entries, frame width is {width}")
        if np.any(np.diff(ts) < 0):
            raise MalformedMetadataError("column_timestamps must be non-decreasing")
        if self.intrinsics is not None and len(self.intrinsics.altitude_deg) != height:
            raise MalformedMetadataError("beam intrinsics do not match frame height")
        object.__setattr__(self, "channels", dict(self.channels))
        object.__setattr__(self, "pixel_shift_by_row", shifts)
        object.__setattr__(self, "column_timestamps", ts)

    @property
    def height(self) -> int:
        return next(iter(self.channels.values())).height

    @property
    def width(self) -> int:
        return next(iter(self.channels.values())).width

    def __getitem__(self, kind) -> ChannelImage:
        return self.channels[kind]


@dataclass(frozen=True)
class StackedImage:
    """Depth-wise stack in fixed order (reflectivity, signal, near_ir)."""

    pixels: np.ndarray  # (height, width, 3)
    order: tuple = STACK_ORDER

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def depth(self) -> int:
        return self.pixels.shape[2]

    def channel(self, kind) -> ChannelImage:
        return ChannelImage(self.pixels[:, :, self.order.index(kind)], 8, kind)


@dataclass(frozen=True)
class PointCloud:
    """3D points with the (row, col) pixel each one came from."""

    points: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    grid_shape: tuple = (NATIVE_HEIGHT, NATIVE_WIDTH)
    reference_frame: str = "lidar"
    ranges: np.ndarray | None = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(self.cols, dtype=np.int64).reshape(-1)
        if not (len(pts) == len(rows) == len(cols)):
            raise ValueError("points, rows and cols must have equal length")
        h, w = self.grid_shape
        if len(rows) and (rows.min() < 0 or rows.max() >= h or cols.min() < 0 or cols.max() >= w):
            raise ValueError("point source pixel outside the image grid")
        rng = np.linalg.norm(pts, axis=1) if self.ranges is None else np.asarray(self.ranges, float)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "ranges", rng)

    def __len__(self):
        return len(self.points)

    def subset(self, index) -> "PointCloud":
        return PointCloud(self.points[index], self.rows[index], self.cols[index],
                          self.grid_shape, self.reference_frame, self.ranges[index])

    def transformed(self, matrix, reference_frame) -> "PointCloud":
        """Apply a 4x4 homogeneous transform; ranges keep their sensor values."""
        m = np.asarray(matrix, dtype=float)
        pts = self.points @ m[:3, :3].T + m[:3, 3]
        return PointCloud(pts, self.rows, self.cols, self.grid_shape, reference_frame, self.ranges)


def _roll_rows(pixels, shifts):
    h, w = pixels.shape
    cols = (np.arange(w)[None, :] - shifts[:, None]) % w
    return pixels[np.arange(h)[:, None], cols]


def destagger(frame: LidarFrame) -> LidarFrame:
    """Cyclically shift row ``r`` of every channel right by ``pixel_shift_by_row[r]``."""
    if not frame.staggered:
        raise PreconditionError("frame is already destaggered")
    shifts = frame.pixel_shift_by_row
    chans = {k: img.with_pixels(_roll_rows(img.pixels, shifts)) for k, img in frame.channels.items()}
    return replace(frame, channels=chans, staggered=False)


def restagger(frame: LidarFrame) -> LidarFrame:
    """Exact inverse of :func:`destagger`."""
    if frame.staggered:
        raise PreconditionError("frame is already staggered")
    shifts = -frame.pixel_shift_by_row
    chans = {k: img.with_pixels(_roll_rows(img.pixels, shifts)) for k, img in frame.channels.items()}
    return replace(frame, channels=chans, staggered=True)


def downsample_bit_depth(img: ChannelImage) -> ChannelImage:
    """16-bit to 8-bit by ``v // 256``. An 8-bit input is returned as-is with a warning."""
    if img.bit_depth == 8:
        warnings.warn(f"{img.channel_kind} image is already 8-bit; left unchanged", stacklevel=2)
        return img
    return img.with_pixels(img.pixels >> 8, bit_depth=8)


def resize_bilinear(img: ChannelImage, new_height: int = RESIZED_HEIGHT) -> ChannelImage:
    """Upscale rows with corner-aligned bilinear interpolation; width is kept.

    Output row ``y`` samples source row ``y * (H - 1) / (new_height - 1)``, so the
    first and last rows of input and output coincide. Results are rounded to
    the nearest integer.
    """
    h = img.height
    if new_height < h:
        raise UnsupportedDownscaleError(f"cannot resize {h} rows down to {new_height}")
    if new_height == h:
        return img
    src = img.pixels.astype(np.float64)
    if h == 1:
        return img.with_pixels(np.repeat(img.pixels, new_height, axis=0))
    y = np.arange(new_height) * ((h - 1) / (new_height - 1))
    y0 = np.minimum(np.floor(y).astype(int), h - 2)
    frac = (y - y0)[:, None]
    out = src[y0] * (1.0 - frac) + src[y0 + 1] * frac
    return img.with_pixels(np.clip(np.rint(out), 0, img.max_value))


def auto_expose(img: ChannelImage, lo_percentile: float = AUTO_EXPOSE_PERCENTILES[0],
                hi_percentile: float = AUTO_EXPOSE_PERCENTILES[1]) -> ChannelImage:
    """Linear stretch of the [lo, hi] intensity quantiles onto the full range."""
    if not 0.0 <= lo_percentile < hi_percentile <= 1.0:
        raise ValueError("need 0 <= lo_percentile < hi_percentile <= 1")
    px = img.pixels.astype(np.float64)
    lo, hi = np.quantile(px, [lo_percentile, hi_percentile])
    if hi <= lo:
        return img
    out = (px - lo) * (img.max_value / (hi - lo))
    return img.with_pixels(np.clip(np.rint(out), 0, img.max_value))


def equalize_histogram(img: ChannelImage) -> ChannelImage:
    """CDF equalization of an 8-bit image: ``v -> floor(255 * cdf(v) / N)``.

    The mapping is a non-decreasing function of ``v``, so pixel ordering is kept.
    Constant images pass through unchanged.
    """
    if img.bit_depth != 8:
        raise PreconditionError("histogram equalization expects an 8-bit image")
    px = img.pixels
    if px.size == 0 or px.min() == px.max():
        return img
    cdf = np.cumsum(np.bincount(px.ravel(), minlength=256))
    lut = (255 * cdf) // px.size
    return img.with_pixels(lut[px])


def stack_channels(reflectivity: ChannelImage, signal: ChannelImage,
                   near_ir: ChannelImage) -> StackedImage:
    imgs = {"reflectivity": reflectivity, "signal": signal, "near_ir": near_ir}
    shape = reflectivity.pixels.shape
    for name, img in imgs.items():
        if img.pixels.shape != shape:
            raise DimensionMismatchError(
                f"channel {name!r} has shape {img.pixels.shape}, expected {shape}")
        if img.bit_depth != 8:
            raise PreconditionError(f"channel {name!r} must be 8-bit before stacking")
    return StackedImage(np.stack([imgs[k].pixels for k in STACK_ORDER], axis=-1))


def _box_sum(a, k):
    """Sum over every k x k window fully inside ``a`` (valid mode)."""
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    c[1:, 1:] = a.cumsum(0).cumsum(1)
    return c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]


def ssim(a: ChannelImage, b: ChannelImage, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all ``window`` x ``window`` uniform windows."""
    if a.pixels.shape != b.pixels.shape:
        raise DimensionMismatchError(f"ssim of {a.pixels.shape} vs {b.pixels.shape}")
    x = a.pixels.astype(np.float64)
    y = b.pixels.astype(np.float64)
    k = min(window, *x.shape)
    n = float(k * k)
    mx, my = _box_sum(x, k) / n, _box_sum(y, k) / n
    sxx = _box_sum(x * x, k) / n - mx * mx
    syy = _box_sum(y * y, k) / n - my * my
    sxy = _box_sum(x * y, k) / n - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float(np.mean(num / den))


def ssim_matrix(images) -> np.ndarray:
    """Symmetric matrix of pairwise SSIM with a unit diagonal."""
    n = len(images)
    m = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            m[i, j] = m[j, i] = ssim(images[i], images[j])
    return m


def channel_ssim_matrix(frame: LidarFrame) -> np.ndarray:
    """Pairwise SSIM of (reflectivity, signal, near_ir) of a destaggered 8-bit frame."""
    if frame.staggered:
        raise PreconditionError("channel SSIM needs a destaggered frame")
    imgs = [frame.channels[k] for k in IMAGE_CHANNELS]
    if any(img.bit_depth != 8 for img in imgs):
        raise PreconditionError("channel SSIM needs 8-bit channels")
    return ssim_matrix(imgs)


@dataclass(frozen=True)
class PreprocessedFrame:
    """Detector-ready images next to the destaggered source frame.

    ``source`` keeps the native range channel, so boxes drawn on ``images``
    map back onto :func:`to_point_cloud` output.
    """

    source: LidarFrame
    images: Mapping[str, ChannelImage]

    @property
    def stacked(self) -> StackedImage:
        return stack_channels(*(self.images[k] for k in STACK_ORDER))

    def ssim_matrix(self) -> np.ndarray:
        return ssim_matrix([self.images[k] for k in IMAGE_CHANNELS])


def preprocess_channel(img: ChannelImage, resize_height: int = RESIZED_HEIGHT,
                       equalize: bool = True) -> ChannelImage:
    out = downsample_bit_depth(img) if img.bit_depth == 16 else img
    out = resize_bilinear(out, resize_height)
    out = auto_expose(out)
    if equalize:
        out = equalize_histogram(out)
    return out


def preprocess_frame(frame: LidarFrame, resize_height: int = RESIZED_HEIGHT,
                     equalize: bool = True) -> PreprocessedFrame:
    """Destagger if needed, then downsample, resize, auto-expose and equalize."""
    if frame.staggered:
        frame = destagger(frame)
    images = {k: preprocess_channel(frame.channels[k], resize_height, equalize)
              for k in IMAGE_CHANNELS if k in frame.channels}
    return PreprocessedFrame(frame, images)


def to_point_cloud(frame: LidarFrame) -> PointCloud:
    """Reconstruct one 3D point per non-zero range pixel, in the lidar frame."""
    if frame.intrinsics is None:
        raise MalformedMetadataError("frame carries no beam intrinsics")
    rng_img = frame.channels["range"].pixels
    h, w = rng_img.shape
    rows, cols = np.nonzero(rng_img)
    meas = cols if frame.staggered else (cols - frame.pixel_shift_by_row[rows]) % w
    r = rng_img[rows, cols].astype(np.float64) * frame.range_unit
    az = 2 * np.pi * meas / w + np.deg2rad(frame.intrinsics.azimuth_deg[rows])
    alt = np.deg2rad(frame.intrinsics.altitude_deg[rows])
    pts = np.column_stack([r * np.cos(alt) * np.cos(az),
                           r * np.cos(alt) * np.sin(az),
                           r * np.sin(alt)])
    return PointCloud(pts, rows, cols, (h, w), "lidar", r)


def shifts_from_intrinsics(intrinsics: BeamIntrinsics, width: int = NATIVE_WIDTH) -> np.ndarray:
    """Pixel shift per row that aligns destaggered columns with azimuth."""
    return np.rint(intrinsics.azimuth_deg / 360.0 * width).astype(np.int64)


# --- recording directory I/O -------------------------------------------------

_NAME_RE = re.compile(r"^(\d+)_(range|signal|near_ir|reflectivity)\.png$")


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.array(im)


def _write_png(path: Path, pixels: np.ndarray):
    from PIL import Image

    # uint16 arrays map to mode "I;16", uint8 to "L"
    Image.fromarray(np.ascontiguousarray(pixels)).save(path)


def load_recording(directory) -> list[LidarFrame]:
    """Load ``{index}_{channel}.png`` frames plus ``meta.json`` from ``directory``."""
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.is_file():
        raise MalformedMetadataError(f"{meta_path}: missing recording metadata")
    try:
        meta = json.loads(meta_path.read_text())
        shifts = meta["pixel_shift_by_row"]
        col_ts = meta["column_timestamps_ns"]
        frame_ts = meta["frame_timestamps_ns"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise MalformedMetadataError(f"{meta_path}: {exc}") from exc
    intr = None
    if "beam_intrinsics" in meta:
        bi = meta["beam_intrinsics"]
        intr = BeamIntrinsics(bi["altitude_angles_deg"], bi["azimuth_angles_deg"])
    staggered = bool(meta.get("staggered", True))
    unit = float(meta.get("range_unit_m", 0.001))

    files: dict[int, dict[str, Path]] = {}
    for p in d.iterdir():
        m = _NAME_RE.match(p.name)
        if m:
            files.setdefault(int(m.group(1)), {})[m.group(2)] = p
    frames = []
    for pos, idx in enumerate(sorted(files)):
        chans = {}
        for kind, p in files[idx].items():
            px = _read_png(p)
            depth = 16 if px.dtype != np.uint8 else 8
            chans[kind] = ChannelImage(px, depth, kind)
        ts = col_ts[pos] if col_ts and isinstance(col_ts[0], list) else col_ts
        frames.append(LidarFrame(chans, ts, shifts, int(frame_ts[pos]), staggered, intr, unit))
    return frames


def recording_indices(directory) -> list[int]:
    d = Path(directory)
    return sorted({int(m.group(1)) for p in d.iterdir() if (m := _NAME_RE.match(p.name))})


def save_recording(frames: Iterable[LidarFrame], directory, indices=None):
    """Write frames in the recording layout read by :func:`load_recording`."""
    frames = list(frames)
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    indices = list(range(len(frames))) if indices is None else list(indices)
    for idx, fr in zip(indices, frames):
        for kind, img in fr.channels.items():
            _write_png(d / f"{idx}_{kind}.png", img.pixels)
    first = frames[0]
    meta = {
        "pixel_shift_by_row": first.pixel_shift_by_row.tolist(),
        "column_timestamps_ns": [f.column_timestamps.tolist() for f in frames],
        "frame_timestamps_ns": [int(f.frame_timestamp) for f in frames],
        "staggered": bool(first.staggered),
        "range_unit_m": first.range_unit,
    }
    if first.intrinsics is not None:
        meta["beam_intrinsics"] = {
            "altitude_angles_deg": first.intrinsics.altitude_deg.tolist(),
            "azimuth_angles_deg": first.intrinsics.azimuth_deg.tolist(),
        }
    (d / "meta.json").write_text(json.dumps(meta))
