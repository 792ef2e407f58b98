"""Planar footprint geometry: containment, jaw-slab extents, separation.

All footprints are convex: discs, oriented boxes, regular polygons. The
gripper frame used throughout puts the finger axis v along (cos yaw, sin yaw)
and the jaw axis u along (-sin yaw, cos yaw); fingers close along u.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Disc:
    radius: float


@dataclass(frozen=True)
class Box:
    hx: float
    hy: float


@dataclass(frozen=True)
class Ngon:
    sides: int
    circumradius: float


Footprint = Disc | Box | Ngon


def footprint_to_dict(fp: Footprint) -> dict:
    if isinstance(fp, Disc):
        return {"kind": "disc", "radius": fp.radius}
    if isinstance(fp, Box):
        return {"kind": "box", "hx": fp.hx, "hy": fp.hy}
    return {"kind": "ngon", "sides": fp.sides, "circumradius": fp.circumradius}


def footprint_from_dict(d: dict) -> Footprint:
    k = d["kind"]
    if k == "disc":
        return Disc(d["radius"])
    if k == "box":
        return Box(d["hx"], d["hy"])
    if k == "ngon":
        return Ngon(int(d["sides"]), d["circumradius"])
    raise ValueError(f"unknown footprint kind {k!r}")


def bounding_radius(fp: Footprint) -> float:
    if isinstance(fp, Disc):
        return fp.radius
    if isinstance(fp, Box):
        return math.hypot(fp.hx, fp.hy)
    return fp.circumradius


def scaled(fp: Footprint, factor: float) -> Footprint:
    if isinstance(fp, Disc):
        return Disc(fp.radius * factor)
    if isinstance(fp, Box):
        return Box(fp.hx * factor, fp.hy * factor)
    return Ngon(fp.sides, fp.circumradius * factor)


def local_vertices(fp: Footprint) -> np.ndarray:
    """Counter-clockwise vertices in the object frame (polygonal shapes only)."""
    if isinstance(fp, Box):
        return np.array([[fp.hx, fp.hy], [-fp.hx, fp.hy],
                         [-fp.hx, -fp.hy], [fp.hx, -fp.hy]])
    if isinstance(fp, Ngon):
        ang = 2.0 * np.pi * np.arange(fp.sides) / fp.sides
        return fp.circumradius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    raise TypeError("disc has no vertices")


def world_vertices(fp: Footprint, x: float, y: float, yaw: float) -> np.ndarray:
    v = local_vertices(fp)
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s], [s, c]])
    return v @ rot.T + np.array([x, y])


def contains_points(fp: Footprint, x: float, y: float, yaw: float,
                    px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Vectorized point-in-footprint test in world coordinates."""
    if isinstance(fp, Disc):
        return (px - x) ** 2 + (py - y) ** 2 <= fp.radius ** 2
    if isinstance(fp, Box):
        c, s = math.cos(yaw), math.sin(yaw)
        dx, dy = px - x, py - y
        lu = c * dx + s * dy
        lv = -s * dx + c * dy
        return (np.abs(lu) <= fp.hx) & (np.abs(lv) <= fp.hy)
    verts = world_vertices(fp, x, y, yaw)
    inside = np.ones(np.shape(px), dtype=bool)
    n = len(verts)
    for i in range(n):
        ax, ay = verts[i]
        bx, by = verts[(i + 1) % n]
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        inside &= cross >= 0.0
    return inside


def to_gripper_frame(px, py, gx, gy, gyaw):
    """World point(s) -> (u, v) in the gripper frame."""
    c, s = math.cos(gyaw), math.sin(gyaw)
    dx, dy = px - gx, py - gy
    v = c * dx + s * dy
    u = -s * dx + c * dy
    return u, v


def slab_extent(fp: Footprint, pose, gripper_pose, half_len: float):
    """Extent [u_lo, u_hi] along the jaw axis of footprint ∩ {|v| <= half_len},
    in gripper-frame coordinates. Returns None when the intersection is empty.
    """
    ox, oy, oyaw = pose
    gx, gy, gyaw = gripper_pose
    if isinstance(fp, Disc):
        cu, cv = to_gripper_frame(ox, oy, gx, gy, gyaw)
        d = max(0.0, abs(cv) - half_len)
        if d > fp.radius:
            return None
        half_chord = math.sqrt(max(0.0, fp.radius ** 2 - d * d))
        return (cu - half_chord, cu + half_chord)
    verts = world_vertices(fp, ox, oy, oyaw)
    u, v = to_gripper_frame(verts[:, 0], verts[:, 1], gx, gy, gyaw)
    us = []
    n = len(u)
    for i in range(n):
        if abs(v[i]) <= half_len:
            us.append(u[i])
        j = (i + 1) % n
        for vb in (half_len, -half_len):
            dv = v[j] - v[i]
            if dv != 0.0:
                t = (vb - v[i]) / dv
                if 0.0 <= t <= 1.0:
                    us.append(u[i] + t * (u[j] - u[i]))
    if not us:
        return None
    return (min(us), max(us))


# -- separation (quasi-static pushes, spawn rejection) ----------------------

def _axes_of(fp: Footprint, x, y, yaw, other_center):
    if isinstance(fp, Disc):
        # circle contributes the axis toward the other shape's nearest feature;
        # approximated by the center-to-center axis plus handled vertex axes below
        return []
    verts = world_vertices(fp, x, y, yaw)
    edges = np.roll(verts, -1, axis=0) - verts
    normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
    lens = np.linalg.norm(normals, axis=1)
    return [tuple(nrm / ln) for nrm, ln in zip(normals, lens) if ln > 0]


def _project(fp: Footprint, x, y, yaw, axis):
    ax, ay = axis
    if isinstance(fp, Disc):
        c = ax * x + ay * y
        return c - fp.radius, c + fp.radius
    verts = world_vertices(fp, x, y, yaw)
    d = verts @ np.array(axis)
    return float(d.min()), float(d.max())


def separation_vector(fp_a: Footprint, pose_a, fp_b: Footprint, pose_b):
    """Minimal translation applied to shape A that separates it from B.
    Returns None when the shapes do not overlap."""
    xa, ya, yawa = pose_a
    xb, yb, yawb = pose_b
    reach = bounding_radius(fp_a) + bounding_radius(fp_b)
    if (xb - xa) ** 2 + (yb - ya) ** 2 > reach * reach:
        return None
    axes = []
    axes += _axes_of(fp_a, xa, ya, yawa, (xb, yb))
    axes += _axes_of(fp_b, xb, yb, yawb, (xa, ya))
    if isinstance(fp_a, Disc) or isinstance(fp_b, Disc):
        if isinstance(fp_a, Disc) and isinstance(fp_b, Disc):
            d = math.hypot(xb - xa, yb - ya)
            if d >= fp_a.radius + fp_b.radius:
                return None
            if d < 1e-12:
                return (-(fp_a.radius + fp_b.radius), 0.0)
            scale = (fp_a.radius + fp_b.radius - d) / d
            return ((xa - xb) * scale, (ya - yb) * scale)
        disc, dpose, poly, ppose = ((fp_a, pose_a, fp_b, pose_b)
                                    if isinstance(fp_a, Disc)
                                    else (fp_b, pose_b, fp_a, pose_a))
        verts = world_vertices(poly, *ppose)
        dc = np.array(dpose[:2])
        i = int(np.argmin(np.linalg.norm(verts - dc, axis=1)))
        delta = dc - verts[i]
        ln = np.linalg.norm(delta)
        if ln > 1e-12:
            axes.append(tuple(delta / ln))
        else:
            axes.append((1.0, 0.0))
    best = None
    for axis in axes:
        amin, amax = _project(fp_a, xa, ya, yawa, axis)
        bmin, bmax = _project(fp_b, xb, yb, yawb, axis)
        overlap = min(amax, bmax) - max(amin, bmin)
        if overlap <= 0:
            return None
        # push A in the direction that resolves along this axis with least motion
        if amax + amin < bmax + bmin:
            cand = (-axis[0] * overlap, -axis[1] * overlap)
        else:
            cand = (axis[0] * overlap, axis[1] * overlap)
        if best is None or overlap < best[0]:
            best = (overlap, cand)
    return best[1]


def footprints_overlap(fp_a: Footprint, pose_a, fp_b: Footprint, pose_b) -> bool:
    return separation_vector(fp_a, pose_a, fp_b, pose_b) is not None
