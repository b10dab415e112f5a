"""Ray-cast lidar over a box room with a capsule phantom standing in it.

The sensor is a 32 x 1024 spinning lidar with a +-45 degree vertical field of
view. Rays are cast in the world frame from the sensor pose; returned points
and frames are in the sensor frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..lidar_frames import (
    NATIVE_HEIGHT,
    NATIVE_WIDTH,
    BeamIntrinsics,
    ChannelImage,
    LidarFrame,
    _roll_rows,
    destagger,
    shifts_from_intrinsics,
)

MISS, HUMAN, FLOOR, WALL = 0, 1, 2, 3
_REFLECTIVITY = np.array([0, 140, 40, 80], dtype=np.uint16)  # indexed by label
# per-row azimuth offsets (deg) in a repeating 4-beam pattern
SYNTHETIC_AZIMUTH_DEG = np.tile([3.164, 1.055, -1.055, -3.164], NATIVE_HEIGHT // 4)


def ray_capsule(origin, dirs, a, b, r) -> np.ndarray:
    """Entry distance of unit rays from ``origin`` into capsule ``ab`` (inf on a miss)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    # only rays passing the bounding sphere can hit; the exact test runs on those
    mc = 0.5 * (a + b) - origin
    rad = 0.5 * np.linalg.norm(b - a) + r
    along = dirs @ mc
    near = (mc @ mc - along * along <= rad * rad) & (along > -rad)
    out = np.full(len(dirs), np.inf)
    if near.any():
        out[near] = _ray_capsule_exact(origin, dirs[near], a, b, r)
    return out


def _ray_capsule_exact(origin, dirs, a, b, r) -> np.ndarray:
    ba = b - a
    oa = origin - a
    baba = ba @ ba
    bard = dirs @ ba
    baoa = ba @ oa
    rdoa = dirs @ oa
    oaoa = oa @ oa
    qa = baba - bard * bard
    qb = baba * rdoa - baoa * bard
    qc = baba * oaoa - baoa * baoa - r * r * baba
    out = np.full(len(dirs), np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        h = qb * qb - qa * qc
        t = (-qb - np.sqrt(h)) / qa
        y = baoa + t * bard
        body = (h >= 0) & (qa > 0) & (y > 0) & (y < baba) & (t > 0)
        out[body] = t[body]
        # end caps
        for centre in (a, b):
            oc = origin - centre
            hb = dirs @ oc
            hc = oc @ oc - r * r
            hh = hb * hb - hc
            tc = -hb - np.sqrt(hh)
            cap = (hh >= 0) & (tc > 0) & (tc < out)
            out[cap] = tc[cap]
    return out


def ray_box_exit(origin, dirs, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Exit distance of rays from inside an axis-aligned box, and the exit axis."""
    with np.errstate(divide="ignore"):
        t_hi = (hi - origin) / dirs
        t_lo = (lo - origin) / dirs
    t = np.where(dirs > 0, t_hi, np.where(dirs < 0, t_lo, np.inf))
    axis = np.argmin(t, axis=1)
    return t[np.arange(len(t)), axis], axis


@dataclass(frozen=True)
class Room:
    lo: tuple = (-4.0, -4.0, 0.0)
    hi: tuple = (4.0, 4.0, 3.0)


@dataclass
class SyntheticLidar:
    """Sensor model; ``pose`` maps sensor coordinates to the world."""

    pose: np.ndarray
    width: int = NATIVE_WIDTH
    height: int = NATIVE_HEIGHT
    intrinsics: BeamIntrinsics = field(
        default_factory=lambda: BeamIntrinsics.uniform(NATIVE_HEIGHT, 90.0, SYNTHETIC_AZIMUTH_DEG))
    room: Room = field(default_factory=Room)
    max_range: float = 60.0

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=float)
        self.shifts = shifts_from_intrinsics(self.intrinsics, self.width)
        m = np.arange(self.width)
        az = 2 * np.pi * m[None, :] / self.width + np.deg2rad(self.intrinsics.azimuth_deg)[:, None]
        alt = np.deg2rad(self.intrinsics.altitude_deg)[:, None]
        # (H, W, 3) unit ray directions in the sensor frame, staggered layout
        self.dirs_sensor = np.stack([np.cos(alt) * np.cos(az), np.cos(alt) * np.sin(az),
                                     np.sin(alt) * np.ones_like(az)], axis=-1)
        self._dirs_world = (self.dirs_sensor.reshape(-1, 3) @ self.pose[:3, :3].T)
        self.origin = self.pose[:3, 3].copy()

    def cast(self, phantom_axis=None, phantom_radius=0.25, with_room=True):
        """Ranges and hit labels for every ray, both ``(H, W)`` in staggered layout."""
        n = len(self._dirs_world)
        rng = np.full(n, np.inf)
        label = np.full(n, MISS, dtype=np.int8)
        if with_room:
            t, axis = ray_box_exit(self.origin, self._dirs_world,
                                   np.asarray(self.room.lo, float), np.asarray(self.room.hi, float))
            rng = t
            label = np.where(axis == 2, FLOOR, WALL).astype(np.int8)
        if phantom_axis is not None:
            th = ray_capsule(self.origin, self._dirs_world, phantom_axis[0], phantom_axis[1],
                             phantom_radius)
            hit = th < rng
            rng = np.where(hit, th, rng)
            label[hit] = HUMAN
        miss = ~(rng <= self.max_range)
        rng[miss] = 0.0
        label[miss] = MISS
        return rng.reshape(self.height, self.width), label.reshape(self.height, self.width)

    def phantom_points(self, phantom_axis, phantom_radius, noise_sigma=0.0, rng=None) -> np.ndarray:
        """Phantom surface points hit by the beams, in the sensor frame, with isotropic noise."""
        t = ray_capsule(self.origin, self._dirs_world, phantom_axis[0], phantom_axis[1],
                        phantom_radius)
        sel = t <= self.max_range
        pts = self.dirs_sensor.reshape(-1, 3)[sel] * t[sel][:, None]
        if noise_sigma > 0:
            pts = pts + rng.normal(0.0, noise_sigma, pts.shape)
        return pts

    def render(self, phantom_axis=None, phantom_radius=0.25, timestamp=0, noise_sigma=0.0,
               rng=None, staggered=True):
        """A full four-channel frame plus its hit-label image (same layout as the frame).

        Range noise is Gaussian along each beam; ranges are stored in millimetres.
        """
        dist, label = self.cast(phantom_axis, phantom_radius)
        if noise_sigma > 0:
            hit = label != MISS
            dist = np.where(hit, np.maximum(dist + rng.normal(0.0, noise_sigma, dist.shape), 1e-3), 0.0)
        range_mm = np.rint(dist * 1000.0).astype(np.uint16)
        refl = _REFLECTIVITY[label] * np.uint16(256)
        with np.errstate(divide="ignore"):
            signal = np.where(dist > 0, np.minimum(refl / np.maximum(dist, 0.5) ** 2, 65535), 0)
        nir = (np.rint(800 + 200 * np.sin(np.linspace(0, 2 * np.pi, self.width)))[None, :]
               * np.ones((self.height, 1))).astype(np.uint16)
        chans = {
            "range": ChannelImage(range_mm, 16, "range"),
            "signal": ChannelImage(signal.astype(np.uint16), 16, "signal"),
            "near_ir": ChannelImage(nir, 16, "near_ir"),
            "reflectivity": ChannelImage(refl, 16, "reflectivity"),
        }
        period = 50_000_000
        col_ts = timestamp + np.arange(self.width, dtype=np.int64) * period // self.width
        frame = LidarFrame(chans, col_ts, self.shifts, int(timestamp), True, self.intrinsics, 0.001)
        if not staggered:
            frame = destagger(frame)
            label = destagger_labels(label, self.shifts)
        return frame, label


def destagger_labels(label: np.ndarray, shifts) -> np.ndarray:
    """Apply the frame destagger shift to a label image."""
    return _roll_rows(label, np.asarray(shifts, dtype=np.int64))
