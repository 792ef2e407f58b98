"""Wrist-viewpoint nadir depth renderer with exact geometry masks.

The camera sits a fixed offset above the fingertip plane, looks straight
down, and rotates with the gripper. Depth is the axial (z) distance from
the camera to the topmost surface sampled by each pixel ray; every pixel
is labeled plane, finger, or a specific object id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import Scene, finger_poses, FINGER_HEIGHT
from .shapes import contains_points

LABEL_PLANE = 0
LABEL_FINGER = 1
LABEL_OBJECT_BASE = 2


@dataclass(frozen=True)
class CameraConfig:
    offset: float = 0.05        # camera height above the fingertip plane
    tan_half_fov: float = 0.6
    resolution: int = 64
    depth_min: float = 0.01     # closest expected surface, for normalization


@dataclass
class DepthImage:
    depth: np.ndarray   # (res, res) float64, axial distance in meters
    labels: np.ndarray  # (res, res) int16 partition of the pixel grid
    camera_z: float


_GRID_CACHE: dict = {}


def _pixel_tangents(cam: CameraConfig):
    key = (cam.resolution, cam.tan_half_fov)
    if key not in _GRID_CACHE:
        n = cam.resolution
        t = ((np.arange(n) + 0.5) / n * 2.0 - 1.0) * cam.tan_half_fov
        tv, tu = np.meshgrid(t, t, indexing="xy")  # tv: finger axis, tu: jaw axis
        _GRID_CACHE[key] = (tu, tv)
    return _GRID_CACHE[key]


def render_depth(scene: Scene, cam: CameraConfig) -> DepthImage:
    g = scene.gripper
    z_cam = g.z + cam.offset
    tu, tv = _pixel_tangents(cam)
    (ux, uy), (vx, vy) = _axes(g.yaw)
    dir_x = tv * vx + tu * ux
    dir_y = tv * vy + tu * uy

    best_h = np.zeros_like(tu)
    labels = np.full(tu.shape, LABEL_PLANE, dtype=np.int16)

    def splat(height, mask_fn, label):
        if height >= z_cam:
            return  # surface at/above the camera: filtered as background
        r = z_cam - height
        px = g.x + r * dir_x
        py = g.y + r * dir_y
        mask = mask_fn(px, py) & (height > best_h)
        best_h[mask] = height
        labels[mask] = label

    for fp, pose in finger_poses(g):
        top = g.z + FINGER_HEIGHT
        splat(top, lambda px, py, fp=fp, pose=pose:
              contains_points(fp, pose[0], pose[1], pose[2], px, py), LABEL_FINGER)
    for i, o in enumerate(scene.objects):
        splat(o.top, lambda px, py, o=o:
              contains_points(o.footprint, o.x, o.y, o.yaw, px, py),
              LABEL_OBJECT_BASE + i)

    depth = np.maximum(z_cam - best_h, 1e-9)
    return DepthImage(depth=depth, labels=labels, camera_z=z_cam)


def _axes(yaw: float):
    c, s = math.cos(yaw), math.sin(yaw)
    return (-s, c), (c, s)


def filtered_depth(img: DepthImage, background_depth: float) -> np.ndarray:
    """Replace plane and finger pixels with the background constant."""
    out = img.depth.copy()
    out[img.labels < LABEL_OBJECT_BASE] = background_depth
    return out


def normalize_depth(depth: np.ndarray, depth_min: float,
                    background_depth: float) -> np.ndarray:
    """Map [depth_min, background] to [0, 1] with clamping; background -> 1.0."""
    span = background_depth - depth_min
    if span <= 0:
        raise ValueError("background depth must exceed depth_min")
    return np.clip((depth - depth_min) / span, 0.0, 1.0)
