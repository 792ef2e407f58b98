"""Episode wrapper around the picking world: action decoding, rewards,
termination, observations through a frozen encoder, and the heuristic
overlay for the reduced-action task."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .sim.world import (Scene, WorldAction, spawn_scene, step_gripper,
                        max_object_height, WIDTH_MAX)
from .sim.render import (CameraConfig, render_depth, filtered_depth,
                         normalize_depth)

R_TERMINAL = 10.0
R_GRASP = 1.0
HEIGHT_COEF = 1000.0
TIME_PENALTY = 0.1
DH_MAX = 0.01
STEP_LEN = 0.01
SIMPLIFIED_LIFT = 0.05

WORKSPACE_RANGES = {
    "extent": (0.02, 0.20),
    "h_robot": (0.04, 0.16),
    "h_lift": (0.01, 0.10),
    "n_max": (3, 5),
}


class EpisodeError(RuntimeError):
    pass


@dataclass
class EpisodeConfig:
    extent: float = 0.20
    h_robot: float = 0.16
    h_lift: float = 0.10
    n_max: int = 5
    horizon: int = 150
    reward_mode: str = "sparse"     # sparse | shaped
    task: str = "full"              # full | simplified
    gamma: float = 0.99
    h_trigger: float = 0.015
    psi_max: float = 0.1
    n_fixed: int | None = None
    camera: CameraConfig = field(default_factory=CameraConfig)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.reward_mode not in ("sparse", "shaped", "binary"):
            raise ValueError(f"unknown reward mode {self.reward_mode!r}")
        if self.task not in ("full", "simplified"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "simplified":
            # the reduced task pays a plain success bonus and lifts by a
            # fixed 5 cm regardless of the curriculum's lift ramp
            self.h_lift = SIMPLIFIED_LIFT
            self.reward_mode = "binary"
        for name in ("extent", "h_robot", "h_lift"):
            lo, hi = WORKSPACE_RANGES[name]
            v = getattr(self, name)
            if not (lo - 1e-9 <= v <= hi + 1e-9):
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")
        lo, hi = WORKSPACE_RANGES["n_max"]
        if not (lo <= self.n_max <= hi):
            raise ValueError(f"n_max={self.n_max} outside [{lo}, {hi}]")
        if self.task == "full" and self.h_lift > self.h_robot + 1e-12:
            raise ValueError("h_lift must not exceed h_robot")

    @property
    def action_dim(self) -> int:
        return 3 if self.task == "simplified" else 5


def decode_action(a: np.ndarray, psi_max: float = 0.1) -> WorldAction:
    """Normalized 5-vector -> world-frame-agnostic gripper command.

    Translation is scaled to 1 cm per unit component then norm-clipped to
    1 cm; g >= 0 opens the hand (ties open)."""
    a = np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0)
    t = STEP_LEN * a[:3]
    n = math.sqrt(t[0] ** 2 + t[1] ** 2 + t[2] ** 2)
    if n > STEP_LEN:
        t = t * (STEP_LEN / n)
    return WorldAction(dx=float(t[0]), dy=float(t[1]), dz=float(t[2]),
                       dyaw=float(a[3] * psi_max), close=bool(a[4] < 0.0))


def reward_value(mode: str, grasp_detected: bool, dh: float, success: bool) -> float:
    """Per-step reward: sparse time penalty / terminal bonus, the shaped
    grasp-and-lift gain shifted negative by its per-step maximum, or the
    reduced task's plain binary payout."""
    if mode == "binary":
        return R_TERMINAL if success else 0.0
    if mode == "sparse":
        return R_TERMINAL if success else -TIME_PENALTY
    gain = (R_GRASP + HEIGHT_COEF * dh) if grasp_detected else 0.0
    r = gain - (R_GRASP + HEIGHT_COEF * DH_MAX)
    if success:
        r += R_TERMINAL
    return r


@dataclass
class Transition:
    observation: np.ndarray | None
    action: np.ndarray
    reward: float
    terminal: bool
    success: bool
    grasp_detected: bool
    collision_stall: bool
    full_action: np.ndarray | None = None  # overlay-expanded action (simplified task)

    def __post_init__(self):
        if self.success and not self.terminal:
            raise AssertionError("success implies terminal")


class PickEnv:
    """One episodic environment instance; owns its Scene exclusively.

    observation="latent" encodes the filtered depth image through a frozen
    encoder and appends the normalized jaw width; "image" skips encoding
    (dataset collection), "none" is for scripted policies that read the
    scene directly.
    """

    def __init__(self, config: EpisodeConfig, encoder=None,
                 observation: str = "latent", log=None):
        if observation not in ("latent", "image", "none"):
            raise ValueError(f"unknown observation mode {observation!r}")
        if observation == "latent" and encoder is None:
            raise EpisodeError("latent observations need a frozen encoder at construction")
        self.config = config
        self.encoder = encoder
        self.observation_mode = observation
        self.log = log
        self.scene: Scene | None = None
        self.steps = 0
        self.done = True
        self.success = False
        self._grasp_triggered = False
        self._background_depth = 0.0
        self._episode_seed = None

    @property
    def obs_dim(self) -> int:
        if self.observation_mode != "latent":
            raise EpisodeError("obs_dim only defined for latent observations")
        return self.encoder.latent_dim + 1

    def set_workspace(self, extent: float, h_robot: float, h_lift: float, n_max: int):
        self.config = replace(self.config, extent=extent, h_robot=h_robot,
                              h_lift=h_lift, n_max=n_max)

    def reset(self, episode_seed: int):
        rng = np.random.default_rng(int(episode_seed))
        cfg = self.config
        self.scene = spawn_scene(rng, cfg.n_max, cfg.extent, cfg.h_robot,
                                 n_fixed=cfg.n_fixed)
        self.steps = 0
        self.done = False
        self.success = False
        self._grasp_triggered = False
        self._background_depth = cfg.h_robot + cfg.camera.offset
        self._episode_seed = int(episode_seed)
        if self.log is not None:
            from .sim.world import scene_to_dict
            self.log.write({"type": "episode_start", "seed": self._episode_seed,
                            "scene": scene_to_dict(self.scene),
                            "config": {"extent": cfg.extent, "h_robot": cfg.h_robot,
                                       "h_lift": cfg.h_lift, "n_max": cfg.n_max,
                                       "horizon": cfg.horizon,
                                       "reward_mode": cfg.reward_mode,
                                       "task": cfg.task}})
        return self.observe()

    def resume_from_scene(self, scene: Scene, episode_seed: int = 0):
        """Continue an episode from an explicit scene (table clearing, replay)."""
        self.scene = scene
        self.steps = 0
        self.done = False
        self.success = False
        self._grasp_triggered = False
        self._background_depth = self.config.h_robot + self.config.camera.offset
        self._episode_seed = int(episode_seed)
        return self.observe()

    def overlay_action(self, a3: np.ndarray) -> np.ndarray:
        """Expand (t_x, t_y, psi) with the scripted descent/grasp/ascent.

        The closing command fires on the step the fingertips reach the
        trigger height, while still descending, so the jaw closes at its
        lowest point; every later step holds the grasp and ascends."""
        if self.config.task != "simplified":
            raise EpisodeError("overlay only applies to the simplified task")
        a3 = np.asarray(a3, dtype=np.float64)
        if self._grasp_triggered:
            tz, g = 1.0, -1.0
        elif self.scene.gripper.z <= self.config.h_trigger:
            self._grasp_triggered = True
            tz, g = -1.0, -1.0
        else:
            tz, g = -1.0, 1.0
        return np.array([a3[0], a3[1], tz, a3[2], g], dtype=np.float64)

    def step(self, action: np.ndarray) -> Transition:
        if self.done:
            raise EpisodeError("step() after terminal state")
        action = np.asarray(action, dtype=np.float64)
        if self.config.task == "simplified":
            if action.shape != (3,):
                raise EpisodeError(f"simplified task takes 3-dim actions, got {action.shape}")
            full = self.overlay_action(action)
        else:
            if action.shape != (5,):
                raise EpisodeError(f"full task takes 5-dim actions, got {action.shape}")
            full = action

        world_action = decode_action(full, self.config.psi_max)
        z_before = self.scene.gripper.z
        outcome = step_gripper(self.scene, world_action)
        dh = self.scene.gripper.z - z_before
        self.steps += 1

        held = self.scene.attached_object()
        success = held is not None and held.bottom >= self.config.h_lift - 1e-12
        collision_stall = bool(outcome.downward_stall)
        failure = False
        if self.config.task == "simplified":
            # stalled on an obstacle before the grasp trigger, or the
            # one-shot grasp attempt came up empty: the episode is decided
            if collision_stall and self.scene.gripper.z > self.config.h_trigger + 1e-12:
                failure = True
            elif self._grasp_triggered and held is None:
                failure = True
        terminal = success or failure or self.steps >= self.config.horizon
        reward = reward_value(self.config.reward_mode, outcome.grasp_detected,
                              dh, success)
        self.done = terminal
        self.success = success

        obs = None if terminal else self.observe()
        tr = Transition(observation=obs, action=action, reward=reward,
                        terminal=terminal, success=success,
                        grasp_detected=outcome.grasp_detected,
                        collision_stall=collision_stall,
                        full_action=full if self.config.task == "simplified" else None)
        if self.log is not None:
            self.log.write({"type": "step", "k": self.steps,
                            "action": [float(v) for v in action],
                            "reward": reward, "terminal": terminal,
                            "success": success,
                            "grasp_detected": tr.grasp_detected,
                            "collision_stall": collision_stall})
        return tr

    def render_filtered(self) -> np.ndarray:
        """Normalized filtered depth image in [0, 1] (plane/fingers -> 1.0)."""
        img = render_depth(self.scene, self.config.camera)
        filt = filtered_depth(img, self._background_depth)
        return normalize_depth(filt, self.config.camera.depth_min,
                               self._background_depth)

    def observe(self):
        if self.observation_mode == "none":
            return None
        image = self.render_filtered()
        if self.observation_mode == "image":
            return image
        z = self.encoder.encode(image)
        width = self.scene.gripper.width / WIDTH_MAX
        return np.concatenate([z, [width]])

    def lifted_height(self) -> float:
        return max_object_height(self.scene)
