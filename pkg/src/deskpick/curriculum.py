"""Workspace curriculum: linear parameter ramps driven by a windowed
success rate, with threshold-triggered progression and ablation freezing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

PARAM_NAMES = ("extent", "h_robot", "h_lift", "n_max")

# (min, max) per workspace parameter across the whole schedule
DEFAULT_RANGES = {
    "extent": (0.02, 0.20),
    "h_robot": (0.04, 0.16),
    "h_lift": (0.01, 0.10),
    "n_max": (3.0, 5.0),
}


@dataclass(frozen=True)
class CurriculumSpec:
    ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))
    n_steps: int = 8
    threshold: float = 0.7
    window: int = 1000

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie in (0, 1)")
        for name in PARAM_NAMES:
            lo, hi = self.ranges[name]
            if lo > hi:
                raise ValueError(f"{name}: min {lo} > max {hi}")


def params_at(spec: CurriculumSpec, lam: float) -> dict:
    """Workspace parameters at progress lam in [0, 1]; n_max rounds half-up."""
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lambda {lam} outside [0, 1]")
    out = {}
    for name in PARAM_NAMES:
        lo, hi = spec.ranges[name]
        v = lo + lam * (hi - lo)
        out[name] = int(math.floor(v + 0.5)) if name == "n_max" else v
    return out


def freeze_parameter(spec: CurriculumSpec, name: str) -> CurriculumSpec:
    """Pin one parameter to its maximum over the whole schedule (ablations)."""
    if name not in PARAM_NAMES:
        raise ValueError(f"unknown curriculum parameter {name!r}")
    ranges = dict(spec.ranges)
    lo, hi = ranges[name]
    ranges[name] = (hi, hi)
    return replace(spec, ranges=ranges)


class CurriculumState:
    """Progress index plus the ring buffer of recent episode outcomes.

    The buffer clears on advancement, so each stage's threshold is measured
    on that stage's episodes only.
    """

    def __init__(self, spec: CurriculumSpec, step_index: int = 0):
        self.spec = spec
        self.step_index = int(step_index)
        self.outcomes: list[bool] = []
        self.last_rate = 0.0

    @property
    def lam(self) -> float:
        if self.spec.n_steps == 1:
            return 1.0
        return self.step_index / (self.spec.n_steps - 1)

    @property
    def at_final_step(self) -> bool:
        return self.step_index >= self.spec.n_steps - 1

    def params(self) -> dict:
        return params_at(self.spec, self.lam)

    def windowed_success_rate(self) -> float:
        if not self.outcomes:
            return 0.0
        return sum(self.outcomes) / len(self.outcomes)

    def record_and_maybe_advance(self, episode_success: bool):
        """Push one outcome; advance when a full window's mean clears the
        threshold. Returns (advanced, lambda)."""
        self.outcomes.append(bool(episode_success))
        if len(self.outcomes) > self.spec.window:
            self.outcomes.pop(0)
        self.last_rate = self.windowed_success_rate()
        advanced = False
        if (len(self.outcomes) == self.spec.window
                and not self.at_final_step
                and self.last_rate >= self.spec.threshold):
            self.step_index += 1
            self.outcomes.clear()
            advanced = True
        return advanced, self.lam

    def snapshot(self) -> dict:
        return {"step_index": self.step_index,
                "outcomes": [bool(b) for b in self.outcomes],
                "last_rate": self.last_rate}

    def load_snapshot(self, snap: dict):
        self.step_index = int(snap["step_index"])
        self.outcomes = [bool(b) for b in snap["outcomes"]]
        self.last_rate = float(snap.get("last_rate", 0.0))


def single_stage_spec(spec: CurriculumSpec) -> CurriculumSpec:
    """No-curriculum baseline: one stage with every parameter at maximum."""
    ranges = {name: (hi, hi) for name, (lo, hi) in spec.ranges.items()}
    return replace(spec, ranges=ranges, n_steps=1)
