"""Hand-written grasp-and-pull controller.

Not a learned policy: a three-phase Cartesian servo that approaches the knob,
pinches it, and drags it along its opening arc. It exists to exercise the
whole physics pipeline (kinematics, contacts, friction, hinge) independently
of any learning code, and doubles as a sanity baseline: if this cannot open
the door, no policy can.

The pull phase crawls a target angle along the arc at a bounded rate with the
lead over the measured hinge angle capped, so the tangential spring stays
inside the friction cone and the pads never slide off the knob. Works purely
from the observation vector plus the scene constants, the same interface a
learned policy gets.
"""

from __future__ import annotations

import math

import numpy as np

from .env import (
    DOOR_ANGLE_MAX,
    EnvConfig,
    KNOB_OFFSET,
    KNOB_RADIUS,
    N_JOINTS,
    door_axes,
    forward_kinematics,
    geometric_jacobian,
    knob_center,
    knob_travel_direction,
    target_grip_rotation,
)

APPROACH, CLOSE, PULL = "approach", "close", "pull"


class ScriptedGraspPull:
    """Callable obs -> action; call reset() between episodes."""

    def __init__(self, config: EnvConfig | None = None,
                 position_gain: float = 6.0, rotation_gain: float = 6.0,
                 pull_rate: float = 1.2, max_lead: float = math.radians(1.7),
                 damping: float = 0.05):
        self.cfg = config or EnvConfig()
        self.kp = position_gain
        self.kr = rotation_gain
        self.pull_rate = pull_rate          # rad/s of arc-target advance
        self.max_lead = max_lead            # cap on target minus measured angle
        self.damping = damping
        self._target_rot = target_grip_rotation()
        self._vel_limit = np.asarray(self.cfg.joint_vel_limit, dtype=np.float64)
        self.reset()

    def reset(self) -> None:
        self.phase = APPROACH
        self._pull_angle = 0.0
        self._prev_angle = 0.0

    def _servo(self, joint_pos, goal_pos, ee_pos, ee_rot, feedforward) -> np.ndarray:
        v_des = self.kp * (goal_pos - ee_pos) + feedforward
        rt = self._target_rot
        rot_err = 0.5 * (np.cross(ee_rot[:, 0], rt[:, 0])
                         + np.cross(ee_rot[:, 1], rt[:, 1])
                         + np.cross(ee_rot[:, 2], rt[:, 2]))
        twist = np.concatenate([v_des, self.kr * rot_err])
        jac = geometric_jacobian(joint_pos)
        dq = np.linalg.solve(jac.T @ jac + self.damping**2 * np.eye(N_JOINTS), jac.T @ twist)
        return np.clip(dq / self._vel_limit, -1.0, 1.0)

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        joint_pos = obs[6:13]
        width = float(obs[20])
        angle = float(obs[24])
        # the observed ee may carry sensor noise; recompute the pose the servo
        # actually controls from the joint readings
        ee_pos, ee_rot = forward_kinematics(joint_pos)
        knob = ee_pos + obs[21:24]
        u, n = door_axes(angle)
        hinge = knob - KNOB_RADIUS * u - KNOB_OFFSET * n

        if self.phase == APPROACH and np.linalg.norm(knob - ee_pos) < 0.004:
            self.phase = CLOSE
        if self.phase == CLOSE and width <= 0.012:
            self.phase = PULL
            self._pull_angle = angle
            self._prev_angle = angle

        grip_cmd = 0.0
        feedforward = np.zeros(3)
        if self.phase == APPROACH:
            goal = knob
        elif self.phase == CLOSE:
            goal = knob
            grip_cmd = -1.0
        else:
            self._pull_angle = min(self._pull_angle + self.pull_rate * self.cfg.dt,
                                   angle + self.max_lead,
                                   DOOR_ANGLE_MAX + self.max_lead)
            goal = knob_center(hinge, self._pull_angle)
            # feedforward at the door's measured rate, not the nominal crawl
            # rate, so a lagging door is never outrun
            rate = (angle - self._prev_angle) / self.cfg.dt
            tangent, arc_speed = knob_travel_direction(angle)
            feedforward = max(rate, 0.0) * arc_speed * tangent
            grip_cmd = -1.0
        self._prev_angle = angle

        action = np.zeros(8)
        action[:N_JOINTS] = self._servo(joint_pos, goal, ee_pos, ee_rot, feedforward)
        action[7] = grip_cmd
        return action
