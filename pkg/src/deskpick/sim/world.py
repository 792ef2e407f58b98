"""Quasi-static 2.5-D picking world.

Extruded convex objects rest on the z=0 plane; a floating parallel-jaw
gripper translates/rotates freely above it. Objects only move when pushed
by a finger (minimal separating translation) or while attached to the
gripper after a detected grasp. All state transitions are deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .shapes import (Footprint, Disc, Box, Ngon, bounding_radius, scaled,
                     footprints_overlap, separation_vector, slab_extent,
                     footprint_to_dict, footprint_from_dict)

# gripper geometry (meters)
WIDTH_MAX = 0.05          # fully open jaw
GRASP_MIN_EXTENT = 0.001  # minimum object extent for a stalled closure
FINGER_HALF_LEN = 0.010   # finger pad half-length along the finger axis
FINGER_THICKNESS = 0.008  # finger pad thickness along the jaw axis
FINGER_HEIGHT = 0.030     # pad extends upward from the fingertip plane

OBJECT_DIM_MIN = 0.005
OBJECT_DIM_MAX = 0.020
OBJECT_HEIGHT_MIN = 0.010
OBJECT_HEIGHT_MAX = 0.040

SNAPSHOT_VERSION = 1


@dataclass
class RigidObject:
    footprint: Footprint
    height: float
    x: float
    y: float
    yaw: float
    attached: bool = False
    bottom: float = 0.0
    # gripper-frame attachment offsets, valid while attached
    grip_du: float = 0.0
    grip_dv: float = 0.0
    grip_dyaw: float = 0.0
    grip_dz: float = 0.0

    @property
    def top(self) -> float:
        return self.bottom + self.height

    def pose(self):
        return (self.x, self.y, self.yaw)


@dataclass
class GripperState:
    x: float
    y: float
    z: float
    yaw: float
    width: float = WIDTH_MAX
    fingers_stalled: bool = False


@dataclass
class Scene:
    objects: list[RigidObject]
    gripper: GripperState
    extent: float
    spawn_shrink_warnings: int = 0

    def attached_object(self) -> RigidObject | None:
        for o in self.objects:
            if o.attached:
                return o
        return None


@dataclass(frozen=True)
class WorldAction:
    dx: float
    dy: float
    dz: float
    dyaw: float
    close: bool


@dataclass
class StepOutcome:
    moved: tuple
    downward_stall: bool = False
    grasp_detected: bool = False
    grasped_now: bool = False
    released: bool = False
    pushes: int = 0


def jaw_axes(yaw: float):
    """(u_axis, v_axis): jaw axis and finger axis as world unit vectors."""
    c, s = math.cos(yaw), math.sin(yaw)
    return (-s, c), (c, s)


def finger_poses(gripper: GripperState):
    """World poses of the two finger pads (OBB centers, outboard of the jaw)."""
    (ux, uy), _ = jaw_axes(gripper.yaw)
    off = gripper.width / 2.0 + FINGER_THICKNESS / 2.0
    fp = Box(FINGER_THICKNESS / 2.0, FINGER_HALF_LEN)
    return [(fp, (gripper.x + ux * off, gripper.y + uy * off, gripper.yaw)),
            (fp, (gripper.x - ux * off, gripper.y - uy * off, gripper.yaw))]


def _sync_attached(scene: Scene):
    g = scene.gripper
    o = scene.attached_object()
    if o is None:
        return
    (ux, uy), (vx, vy) = jaw_axes(g.yaw)
    o.x = g.x + ux * o.grip_du + vx * o.grip_dv
    o.y = g.y + uy * o.grip_du + vy * o.grip_dv
    o.yaw = g.yaw + o.grip_dyaw
    o.bottom = g.z + o.grip_dz


def _resolve_finger_pushes(scene: Scene) -> int:
    """Push resting objects out of finger collisions, then one chaining pass
    for object-object overlaps created by the push."""
    g = scene.gripper
    if not scene.objects or g.z >= max(o.height for o in scene.objects):
        return 0
    pushes = 0
    moved = []
    for o in scene.objects:
        if o.attached or g.z >= o.height:
            continue
        for fp, pose in finger_poses(g):
            sep = separation_vector(o.footprint, o.pose(), fp, pose)
            if sep is not None:
                o.x += sep[0]
                o.y += sep[1]
                pushes += 1
                moved.append(o)
    for o in moved:
        for other in scene.objects:
            if other is o or other.attached:
                continue
            sep = separation_vector(other.footprint, other.pose(),
                                    o.footprint, o.pose())
            if sep is not None:
                other.x += sep[0]
                other.y += sep[1]
                pushes += 1
    return pushes


def _contact_height(scene: Scene) -> float:
    """Highest surface the descending fingers currently rest on."""
    g = scene.gripper
    contact = 0.0
    for o in scene.objects:
        if o.attached:
            continue
        for fp, pose in finger_poses(g):
            if footprints_overlap(o.footprint, o.pose(), fp, pose):
                contact = max(contact, min(o.top, g.z))
                break
    held = scene.attached_object()
    if held is not None:
        contact = max(contact, -held.grip_dz)
    return contact


def grasp_candidates(scene: Scene):
    """Objects the closing jaw would stall on, with their jaw-axis slices.

    A candidate's footprint slice through the finger band must be non-empty,
    at least GRASP_MIN_EXTENT wide, and lie fully inside the current opening.
    Returns a list of (first_contact, index, u_lo, u_hi), best-first.
    """
    g = scene.gripper
    half_open = g.width / 2.0
    gripper_pose = (g.x, g.y, g.yaw)
    out = []
    for idx, o in enumerate(scene.objects):
        if o.attached or g.z >= o.height or o.bottom > 0.0:
            continue
        ext = slab_extent(o.footprint, o.pose(), gripper_pose, FINGER_HALF_LEN)
        if ext is None:
            continue
        u_lo, u_hi = ext
        if u_hi - u_lo < GRASP_MIN_EXTENT:
            continue
        if u_hi > half_open or u_lo < -half_open:
            continue
        out.append((max(u_hi, -u_lo), idx, u_lo, u_hi))
    out.sort(key=lambda t: (-t[0], t[1]))
    return out


def detect_grasp(scene: Scene) -> bool:
    """Close the jaw: stall on the first-contact graspable object and attach
    it (centering it between the pads), or run the jaw to zero width."""
    g = scene.gripper
    cands = grasp_candidates(scene)
    if not cands:
        g.width = 0.0
        g.fingers_stalled = False
        return False
    _, idx, u_lo, u_hi = cands[0]
    o = scene.objects[idx]
    (ux, uy), (vx, vy) = jaw_axes(g.yaw)
    shift = -(u_lo + u_hi) / 2.0
    o.x += ux * shift
    o.y += uy * shift
    g.width = u_hi - u_lo
    g.fingers_stalled = True
    o.attached = True
    rel_x, rel_y = o.x - g.x, o.y - g.y
    o.grip_du = rel_x * ux + rel_y * uy
    o.grip_dv = rel_x * vx + rel_y * vy
    o.grip_dyaw = o.yaw - g.yaw
    o.grip_dz = o.bottom - g.z
    # centering may have shoved the object into a neighbour; push the
    # neighbour aside once
    for other in scene.objects:
        if other is o or other.attached:
            continue
        sep = separation_vector(other.footprint, other.pose(),
                                o.footprint, o.pose())
        if sep is not None:
            other.x += sep[0]
            other.y += sep[1]
    return True


def _release(scene: Scene):
    o = scene.attached_object()
    if o is not None:
        o.attached = False
        o.bottom = 0.0
    scene.gripper.width = WIDTH_MAX
    scene.gripper.fingers_stalled = False


def step_gripper(scene: Scene, action: WorldAction) -> StepOutcome:
    g = scene.gripper
    old = (g.x, g.y, g.z)
    g.yaw += action.dyaw
    g.x += action.dx
    g.y += action.dy
    _sync_attached(scene)
    pushes = _resolve_finger_pushes(scene)

    stall = False
    target = g.z + action.dz
    if action.dz < 0.0:
        contact = _contact_height(scene)
        new_z = max(target, contact)
        stall = target < contact - 1e-12
        g.z = new_z
    else:
        g.z = target
    _sync_attached(scene)

    grasped_now = False
    released = False
    if action.close:
        if scene.attached_object() is None and g.width > 0.0:
            grasped_now = detect_grasp(scene)
    else:
        if scene.attached_object() is not None:
            released = True
        if g.width != WIDTH_MAX or g.fingers_stalled:
            _release(scene)

    return StepOutcome(
        moved=(g.x - old[0], g.y - old[1], g.z - old[2]),
        downward_stall=stall,
        grasp_detected=scene.attached_object() is not None,
        grasped_now=grasped_now,
        released=released,
        pushes=pushes,
    )


def max_object_height(scene: Scene) -> float:
    """Highest bottom face over all objects; 0 for an empty or resting scene."""
    if not scene.objects:
        return 0.0
    return max(o.bottom for o in scene.objects)


# -- spawning ----------------------------------------------------------------

def _sample_footprint(rng: np.random.Generator, extent: float, n: int) -> Footprint:
    # crowd-aware cap keeps n objects placeable in small workspaces without
    # grinding through the rejection loop
    crowd_cap = extent / (2.2 * math.sqrt(n))
    cap = max(OBJECT_DIM_MIN, min(OBJECT_DIM_MAX, extent / 2.0, crowd_cap))
    kind = int(rng.integers(0, 3))
    if kind == 0:
        return Disc(float(rng.uniform(OBJECT_DIM_MIN, cap)))
    if kind == 1:
        box_cap = max(OBJECT_DIM_MIN, cap / math.sqrt(2.0))
        return Box(float(rng.uniform(OBJECT_DIM_MIN, box_cap)),
                   float(rng.uniform(OBJECT_DIM_MIN, box_cap)))
    sides = int(rng.choice([3, 5, 6]))
    return Ngon(sides, float(rng.uniform(OBJECT_DIM_MIN, cap)))


def spawn_scene(rng: np.random.Generator, n_max: int, extent: float,
                h_robot: float, *, n_fixed: int | None = None,
                max_attempts: int = 1000) -> Scene:
    """Drop 1..n_max objects at non-overlapping uniform poses inside the
    extent x extent square and park the open gripper above its center.

    Placement rejects on conservative bounding-circle overlap; when a full
    attempt budget is exhausted, every pending size shrinks by 0.8 and
    placement restarts (counted in spawn_shrink_warnings)."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    n = int(n_fixed) if n_fixed is not None else int(rng.integers(1, n_max + 1))
    samples = [(_sample_footprint(rng, extent, n),
                float(rng.uniform(OBJECT_HEIGHT_MIN, OBJECT_HEIGHT_MAX)))
               for _ in range(n)]
    warnings = 0
    scale = 1.0
    while True:
        placed: list[tuple] = []  # (x, y, yaw, br, footprint)
        attempts = 0
        ok = True
        for fp0, _height in samples:
            fp = scaled(fp0, scale) if scale != 1.0 else fp0
            br = bounding_radius(fp)
            lim = max(0.0, extent / 2.0 - br)
            while True:
                attempts += 1
                if attempts > max_attempts:
                    ok = False
                    break
                x = float(rng.uniform(-lim, lim)) if lim > 0 else 0.0
                y = float(rng.uniform(-lim, lim)) if lim > 0 else 0.0
                yaw = float(rng.uniform(0.0, 2.0 * math.pi))
                if all((x - px) ** 2 + (y - py) ** 2 > (br + pbr) ** 2
                       for px, py, _, pbr, _ in placed):
                    placed.append((x, y, yaw, br, fp))
                    break
            if not ok:
                break
        if ok:
            objects = [RigidObject(fp, h, x, y, yaw)
                       for (x, y, yaw, _, fp), (_, h) in zip(placed, samples)]
            gripper = GripperState(x=0.0, y=0.0, z=float(h_robot), yaw=0.0)
            return Scene(objects=objects, gripper=gripper, extent=float(extent),
                         spawn_shrink_warnings=warnings)
        scale *= 0.8
        warnings += 1


# -- snapshots ----------------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    return {
        "version": SNAPSHOT_VERSION,
        "extent": scene.extent,
        "spawn_shrink_warnings": scene.spawn_shrink_warnings,
        "gripper": {"x": scene.gripper.x, "y": scene.gripper.y,
                    "z": scene.gripper.z, "yaw": scene.gripper.yaw,
                    "width": scene.gripper.width,
                    "fingers_stalled": scene.gripper.fingers_stalled},
        "objects": [{
            "footprint": footprint_to_dict(o.footprint),
            "height": o.height, "x": o.x, "y": o.y, "yaw": o.yaw,
            "attached": o.attached, "bottom": o.bottom,
            "grip_du": o.grip_du, "grip_dv": o.grip_dv,
            "grip_dyaw": o.grip_dyaw, "grip_dz": o.grip_dz,
        } for o in scene.objects],
    }


def scene_from_dict(d: dict) -> Scene:
    if d.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported scene snapshot version {d.get('version')}")
    g = d["gripper"]
    gripper = GripperState(g["x"], g["y"], g["z"], g["yaw"], g["width"],
                           g["fingers_stalled"])
    objects = [RigidObject(footprint_from_dict(o["footprint"]), o["height"],
                           o["x"], o["y"], o["yaw"], o["attached"], o["bottom"],
                           o["grip_du"], o["grip_dv"], o["grip_dyaw"], o["grip_dz"])
               for o in d["objects"]]
    return Scene(objects=objects, gripper=gripper, extent=d["extent"],
                 spawn_shrink_warnings=d["spawn_shrink_warnings"])


def scene_to_json(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene))


def scene_from_json(text: str) -> Scene:
    return scene_from_dict(json.loads(text))
