"""Shaped reward: door progress, knob distance, wrist orientation, grasp, touch.

Five raw terms, each with a fixed weight:

    door     hinge angle in radians, paid only while the knob is grasped
    dist     -1 - tanh(|knob - gripper|), dense approach shaping
    ori      -1 - tanh(|encode(target) - encode(gripper)|) on sine/cosine
             encoded fixed-axis angles, so angle wrapping cannot spike it
    grasp    1 while both pads squeeze the knob
    tactile  L1 norm of the tactile bit vector, paid once the door has opened
             past a small angle while grasped; rewards keeping many units in
             contact instead of opening on a pad edge

The total is the weighted sum; loggers keep the raw terms so term sums can be
reweighted offline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

TERM_NAMES = ("door", "dist", "ori", "grasp", "tactile")

# door angle above which the tactile term unlocks
TACTILE_ANGLE_MIN = math.radians(1.15)


@dataclass(frozen=True)
class RewardWeights:
    door: float = 5.0
    dist: float = 0.4
    ori: float = 0.05
    grasp: float = 0.1
    tactile: float = 0.01

    def as_array(self) -> np.ndarray:
        return np.array([self.door, self.dist, self.ori, self.grasp, self.tactile])

    def max_tactile_episode_contribution(self, max_steps: int, n_units: int = 30) -> float:
        """Ceiling of the tactile term's weighted episode total."""
        return max_steps * (self.tactile * n_units)


DEFAULT_WEIGHTS = RewardWeights()


def encode_orientation(angles: np.ndarray) -> np.ndarray:
    """Three angles to interleaved (sin, cos) pairs; squared norm is always 3."""
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape != (3,):
        raise ContractError(f"expected 3 fixed-axis angles, got shape {angles.shape}")
    out = np.empty(6)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def compute_reward(
    hinge_angle: float,
    knob_in_grasp: bool,
    knob_pos: np.ndarray,
    grip_pos: np.ndarray,
    target_angles: np.ndarray,
    grip_angles: np.ndarray,
    tactile_bits: np.ndarray | None,
    weights: RewardWeights = DEFAULT_WEIGHTS,
) -> tuple[float, np.ndarray]:
    """Returns (total, raw terms in TERM_NAMES order).

    tactile_bits None means the sensor is disabled: the tactile term is zero
    and the breakdown keeps its five-column shape.
    """
    grasp = bool(knob_in_grasp)
    r_door = float(hinge_angle) if grasp else 0.0
    dist = float(np.linalg.norm(np.asarray(knob_pos, dtype=np.float64) - np.asarray(grip_pos, dtype=np.float64)))
    r_dist = -1.0 - math.tanh(dist)
    ori_gap = float(np.linalg.norm(encode_orientation(target_angles) - encode_orientation(grip_angles)))
    r_ori = -1.0 - math.tanh(ori_gap)
    r_grasp = 1.0 if grasp else 0.0
    if tactile_bits is not None and grasp and hinge_angle > TACTILE_ANGLE_MIN:
        r_tactile = float(np.sum(np.abs(np.asarray(tactile_bits, dtype=np.float64))))
    else:
        r_tactile = 0.0
    terms = np.array([r_door, r_dist, r_ori, r_grasp, r_tactile])
    total = float(weights.as_array() @ terms)
    return total, terms
