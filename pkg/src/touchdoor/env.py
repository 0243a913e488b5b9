"""Door-opening scene: a kinematic 7-joint arm and a dynamic hinged door.

Only the door carries dynamics. The arm follows velocity commands exactly
(clipped by joint limits), the gripper is a parallel pair of tactile pads,
and the single degree of freedom that fights back is the door hinge:

    I * a'' = tau_applied - k * a - b * a' - tau_fric * sign(a')

integrated semi-implicitly (velocity first, then position) with the dry
friction applied as a velocity shrink before the linear update, and the angle
clamped to [0, pi/2] with outward velocity zeroed at the stops.

Contacts are penalty springs: the knob box is tested against each finger pad
box along the pad normal, normal force is stiffness times penetration, and
the tangential pull transmitted to the door is a stiff spring-damper from
gripper to knob clipped at the friction cone (knob_friction times total
normal force). Pad forces are distributed over the tactile bump footprints
that overlap the contact patch, in proportion to overlap area, which is what
the tactile array reads.

Frames: world z is up, the arm base is the origin. The door hinge axis is
vertical; at hinge angle zero the panel runs along -y and its outward face
points at the robot (-x normal), and opening swings the knob toward the
robot. The gripper approaches along its local z axis with the fingers
separated along local y; the grasp is vertical (pads above and below the
knob), so the required wrist orientation does not change as the door swings.

The observation is a frozen layout of 25 proprioceptive values plus the 30
tactile bits when the sensor is enabled:

    [0:3]   ee_pos      [3:6]   ee_vel       [6:13] joint_pos
    [13:20] joint_vel   [20]    grip_width   [21:24] knob_rel_pos
    [24]    hinge_angle [25:55] tactile bits
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import tactile
from .errors import ContractError
from .reward import DEFAULT_WEIGHTS, RewardWeights, compute_reward

ACTION_DIM = 8
N_JOINTS = 7
BASE_OBS_DIM = 25

# scene constants (m): door panel reaches DOOR_WIDTH from the hinge, the knob
# sits KNOB_RADIUS out along the panel and KNOB_OFFSET off its outward face
DOOR_WIDTH = 0.40
KNOB_RADIUS = 0.35
KNOB_OFFSET = 0.035
KNOB_HALF = (0.010, 0.020, 0.010)  # half extents along (face normal, panel, vertical)
DOOR_ANGLE_MAX = math.pi / 2.0

# serial chain: (translation in parent frame, rotation axis), then tool offset
JOINT_SPECS = (
    ((0.0, 0.0, 0.333), "z"),
    ((0.0, 0.0, 0.0), "y"),
    ((0.0, 0.0, 0.316), "z"),
    ((0.0, 0.0, 0.0), "y"),
    ((0.0, 0.0, 0.384), "z"),
    ((0.0, 0.0, 0.0), "y"),
    ((0.0, 0.0, 0.0), "z"),
)
TOOL_OFFSET = (0.0, 0.0, 0.150)

OBSERVATION_LAYOUT = (
    ("ee_pos", 3),
    ("ee_vel", 3),
    ("joint_pos", N_JOINTS),
    ("joint_vel", N_JOINTS),
    ("grip_width", 1),
    ("knob_rel_pos", 3),
    ("hinge_angle", 1),
    ("tactile", tactile.N_UNITS),
)


@dataclass(frozen=True)
class EnvParams:
    """Episode-scale physical parameters, the domain-randomization surface."""

    knob_friction: float = 0.9
    hinge_stiffness: float = 0.45
    hinge_damping: float = 0.2
    hinge_friction_loss: float = 0.5
    door_mass: float = 100.0
    knob_mass: float = 6.0
    table_offset_x: float = 0.0
    table_offset_y: float = 0.0

    def validate(self) -> None:
        for name in ("knob_friction", "hinge_stiffness", "hinge_damping",
                     "hinge_friction_loss", "door_mass", "knob_mass"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ContractError(f"EnvParams.{name} must be finite and non-negative, got {value}")
        if self.door_mass <= 0.0 or self.knob_mass < 0.0:
            raise ContractError("door_mass must be positive")


FIELD_NAMES = tuple(EnvParams.__dataclass_fields__)


@dataclass
class DoorState:
    hinge_angle: float = 0.0
    hinge_vel: float = 0.0


@dataclass
class ContactResult:
    per_pad_normal_force: np.ndarray   # (2,)
    tangential_demand: float           # spring-damper force the grasp asks for (N)
    tangential_force: float            # what the friction cone transmits (signed)
    slipping: bool
    knob_in_grasp: bool
    per_unit_force: np.ndarray         # (30,)
    applied_torque: float              # about the hinge axis
    pad_forces: np.ndarray             # (2, 3) force exerted on each pad
    contact_points: np.ndarray         # (2, 3) world application points


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.01
    max_steps: int = 300
    # pre-grasp pose: grip point 8 cm in front of the closed-door knob,
    # approach +x, fingers vertical (solved once, hard-coded)
    home_joints: tuple = (0.5959940316422094, 1.4435510624857395, 1.8726603893002725,
                          -1.9232354813561732, 0.06882940702319425, 1.3192036256240331,
                          -0.33735935220230595)
    joint_limit: tuple = (2.9, 2.0, 2.9, 2.2, 2.9, 2.2, 2.9)
    joint_vel_limit: tuple = (2.0, 2.0, 2.0, 2.0, 2.5, 2.5, 2.5)
    reset_jitter: float = 0.01
    home_grip_width: float = 0.06
    grip_rate: float = 0.2
    grip_width_max: float = 0.08
    pad_thickness: float = 4e-3
    contact_stiffness: float = 1e4
    contact_stiffness_scale: float = 1.0
    tangential_stiffness: float = 5e3
    tangential_damping: float = 3e2
    hinge_pos: tuple = (0.62, 0.175, 0.25)
    tactile_enabled: bool = True
    signal_scale: float = 1.0
    kappa: tuple | float = tactile.NOMINAL_THRESHOLD
    reward_weights: RewardWeights = DEFAULT_WEIGHTS


# ---------------------------------------------------------------- kinematics

def _rot_axis(axis: str, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    if axis == "z":
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    if axis == "y":
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    raise ContractError(f"unknown joint axis {axis!r}")


def forward_kinematics(joint_pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Grip-point position and gripper rotation for one joint vector."""
    q = np.asarray(joint_pos, dtype=np.float64)
    if q.shape != (N_JOINTS,):
        raise ContractError(f"joint vector shape {q.shape}, expected {(N_JOINTS,)}")
    pos = np.zeros(3)
    rot = np.eye(3)
    for (trans, axis), angle in zip(JOINT_SPECS, q):
        pos = pos + rot @ np.asarray(trans)
        rot = rot @ _rot_axis(axis, float(angle))
    pos = pos + rot @ np.asarray(TOOL_OFFSET)
    return pos, rot


def geometric_jacobian(joint_pos: np.ndarray) -> np.ndarray:
    """6x7 Jacobian of the grip point: rows 0:3 linear, 3:6 angular."""
    q = np.asarray(joint_pos, dtype=np.float64)
    pos = np.zeros(3)
    rot = np.eye(3)
    origins, axes = [], []
    unit = {"z": np.array([0.0, 0.0, 1.0]), "y": np.array([0.0, 1.0, 0.0])}
    for (trans, axis), angle in zip(JOINT_SPECS, q):
        pos = pos + rot @ np.asarray(trans)
        origins.append(pos)
        axes.append(rot @ unit[axis])
        rot = rot @ _rot_axis(axis, float(angle))
    ee = pos + rot @ np.asarray(TOOL_OFFSET)
    jac = np.zeros((6, N_JOINTS))
    for i in range(N_JOINTS):
        jac[0:3, i] = np.cross(axes[i], ee - origins[i])
        jac[3:6, i] = axes[i]
    return jac


def fixed_axis_angles(rot: np.ndarray) -> np.ndarray:
    """Extrinsic x-y-z angles (roll, pitch, yaw) with R = Rz(yaw)Ry(pitch)Rx(roll)."""
    pitch = math.asin(-min(1.0, max(-1.0, float(rot[2, 0]))))
    roll = math.atan2(rot[2, 1], rot[2, 2])
    yaw = math.atan2(rot[1, 0], rot[0, 0])
    return np.array([roll, pitch, yaw])


# ---------------------------------------------------------------- door frame

def door_axes(hinge_angle: float) -> tuple[np.ndarray, np.ndarray]:
    """(panel direction u, outward face normal n) at a hinge angle."""
    c, s = math.cos(hinge_angle), math.sin(hinge_angle)
    u = np.array([-s, -c, 0.0])
    n = np.array([-c, s, 0.0])
    return u, n


def knob_center(hinge_world: np.ndarray, hinge_angle: float) -> np.ndarray:
    u, n = door_axes(hinge_angle)
    return hinge_world + KNOB_RADIUS * u + KNOB_OFFSET * n


def knob_travel_direction(hinge_angle: float) -> tuple[np.ndarray, float]:
    """(unit tangent of the knob arc toward opening, arc speed per rad)."""
    c, s = math.cos(hinge_angle), math.sin(hinge_angle)
    d = np.array([-KNOB_RADIUS * c + KNOB_OFFSET * s,
                  KNOB_RADIUS * s + KNOB_OFFSET * c, 0.0])
    speed = float(np.linalg.norm(d))
    return d / speed, speed


def target_grip_rotation() -> np.ndarray:
    """Approach into the closed door face, fingers vertical."""
    z = np.array([1.0, 0.0, 0.0])
    y = np.array([0.0, 0.0, 1.0])
    x = np.cross(y, z)
    return np.column_stack([x, y, z])


def hinge_inertia(params: EnvParams) -> float:
    return params.door_mass * DOOR_WIDTH**2 / 3.0 + params.knob_mass * KNOB_RADIUS**2


# -------------------------------------------------------------------- hinge

def hinge_step(door: DoorState, applied_torque: float, params: EnvParams, dt: float) -> DoorState:
    """One semi-implicit integration step of the hinge."""
    inertia = hinge_inertia(params)
    v = door.hinge_vel
    shrink = dt * params.hinge_friction_loss / inertia
    if abs(v) <= shrink:
        v = 0.0
    else:
        v -= math.copysign(shrink, v)
    v = v + dt * (applied_torque
                  - params.hinge_stiffness * door.hinge_angle
                  - params.hinge_damping * v) / inertia
    a = door.hinge_angle + dt * v
    if a <= 0.0:
        a, v = 0.0, max(v, 0.0)
    elif a >= DOOR_ANGLE_MAX:
        a, v = DOOR_ANGLE_MAX, min(v, 0.0)
    return DoorState(a, v)


def hinge_energy(door: DoorState, params: EnvParams) -> float:
    return 0.5 * hinge_inertia(params) * door.hinge_vel**2 \
        + 0.5 * params.hinge_stiffness * door.hinge_angle**2


# ----------------------------------------------------------------- contacts

def _pad_frames(ee_pos, ee_rot, grip_width, pad_thickness):
    """Centers and (X, N, Z) axes of both pads; N points into the grasp."""
    x, y, z = ee_rot[:, 0], ee_rot[:, 1], ee_rot[:, 2]
    off = 0.5 * grip_width + 0.5 * pad_thickness
    return (
        (ee_pos - off * y, x, y, z),      # pad 0, inward +y
        (ee_pos + off * y, x, -y, z),     # pad 1, inward -y
    )


def compute_contacts(
    ee_pos: np.ndarray,
    ee_rot: np.ndarray,
    grip_width: float,
    ee_vel: np.ndarray,
    hinge_world: np.ndarray,
    door: DoorState,
    params: EnvParams,
    cfg: EnvConfig,
    geometry: tactile.ArrayGeometry,
) -> ContactResult:
    u_axis, n_axis = door_axes(door.hinge_angle)
    z_axis = np.array([0.0, 0.0, 1.0])
    knob = knob_center(hinge_world, door.hinge_angle)
    knob_axes = (n_axis, u_axis, z_axis)

    stiffness = cfg.contact_stiffness * cfg.contact_stiffness_scale
    normals = np.zeros(2)
    per_unit = np.zeros(tactile.N_UNITS)
    points = np.tile(ee_pos, (2, 1))
    inward_dirs = np.zeros((2, 3))

    for i, (center, ax_x, ax_n, ax_z) in enumerate(
            _pad_frames(ee_pos, ee_rot, grip_width, cfg.pad_thickness)):
        inward_dirs[i] = ax_n
        rel = knob - center
        # knob box AABB in the pad frame
        half = np.array([
            sum(h * abs(float(axis @ a)) for h, a in zip(KNOB_HALF, knob_axes))
            for axis in (ax_x, ax_n, ax_z)
        ])
        mid = np.array([float(rel @ ax_x), float(rel @ ax_n), float(rel @ ax_z)])
        pad_half = np.array([geometry.face_half_extents[0], 0.5 * cfg.pad_thickness,
                             geometry.face_half_extents[1]])
        lo = np.maximum(mid - half, -pad_half)
        hi = np.minimum(mid + half, pad_half)
        overlap = hi - lo
        if np.any(overlap <= 0.0):
            continue
        normals[i] = stiffness * overlap[1]
        # contact patch on the pad face, pad-local (u across = X, v along = Z)
        patch = (lo[0], hi[0], lo[2], hi[2])
        weights = np.array([
            tactile.footprint_overlap_area(cu, cv, geometry.footprint_radius, *patch)
            for cu, cv in geometry.unit_centers[i]
        ])
        total = weights.sum()
        if total <= 0.0:
            centers = geometry.unit_centers[i]
            patch_mid = np.array([0.5 * (lo[0] + hi[0]), 0.5 * (lo[2] + hi[2])])
            weights = np.zeros(len(centers))
            weights[int(np.argmin(np.linalg.norm(centers - patch_mid, axis=1)))] = 1.0
            total = 1.0
        start = i * tactile.UNITS_PER_PAD
        per_unit[start:start + tactile.UNITS_PER_PAD] = normals[i] * weights / total
        points[i] = (center + 0.5 * cfg.pad_thickness * ax_n
                     + 0.5 * (lo[0] + hi[0]) * ax_x + 0.5 * (lo[2] + hi[2]) * ax_z)

    total_normal = float(normals.sum())
    tangent, arc_speed = knob_travel_direction(door.hinge_angle)
    if total_normal > 0.0:
        stretch = float((ee_pos - knob) @ tangent)
        rel_vel = float(ee_vel @ tangent) - door.hinge_vel * arc_speed
        demand_signed = cfg.tangential_stiffness * stretch + cfg.tangential_damping * rel_vel
        cap = params.knob_friction * total_normal
        transmitted = float(np.clip(demand_signed, -cap, cap))
        demand = abs(demand_signed)
        slipping = demand > cap
    else:
        demand, transmitted, slipping = 0.0, 0.0, False

    torque = 0.0
    pad_forces = np.zeros((2, 3))
    for i in range(2):
        if normals[i] <= 0.0:
            continue
        share = normals[i] / total_normal
        force_on_knob = normals[i] * inward_dirs[i] + transmitted * share * tangent
        # generalized force on the hinge coordinate (virtual work): increasing
        # angle moves a door point at p by (hinge axis sense) x (p - hinge),
        # which for this hinge is -z x arm
        arm = points[i] - hinge_world
        torque += float(arm[1] * force_on_knob[0] - arm[0] * force_on_knob[1])
        pad_forces[i] = -force_on_knob

    return ContactResult(
        per_pad_normal_force=normals,
        tangential_demand=demand,
        tangential_force=transmitted,
        slipping=bool(slipping),
        knob_in_grasp=bool(normals[0] > 0.0 and normals[1] > 0.0),
        per_unit_force=per_unit,
        applied_torque=torque,
        pad_forces=pad_forces,
        contact_points=points,
    )


# ---------------------------------------------------------------------- env

class DoorEnv:
    """Stateful episode container around the pure physics functions above."""

    def __init__(self, config: EnvConfig | None = None):
        self.cfg = config or EnvConfig()
        self.geometry = tactile.gripper_geometry()
        kappa = self.cfg.kappa
        self.kappa = (np.full(tactile.N_UNITS, float(kappa))
                      if np.isscalar(kappa) else np.asarray(kappa, dtype=np.float64))
        if self.kappa.shape != (tactile.N_UNITS,):
            raise ContractError(f"kappa shape {self.kappa.shape}, expected ({tactile.N_UNITS},)")
        self._vel_limit = np.asarray(self.cfg.joint_vel_limit, dtype=np.float64)
        self._joint_limit = np.asarray(self.cfg.joint_limit, dtype=np.float64)
        self._home = np.asarray(self.cfg.home_joints, dtype=np.float64)
        self.params: EnvParams | None = None
        self._done = True
        self._step_count = 0

    @property
    def obs_dim(self) -> int:
        return BASE_OBS_DIM + (tactile.N_UNITS if self.cfg.tactile_enabled else 0)

    @property
    def act_dim(self) -> int:
        return ACTION_DIM

    @property
    def tactile_slice(self) -> slice:
        return slice(BASE_OBS_DIM, BASE_OBS_DIM + tactile.N_UNITS)

    def reset(self, params: EnvParams | None = None, seed: int = 0) -> np.ndarray:
        params = EnvParams() if params is None else params
        params.validate()
        self.params = params
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        jitter = rng.uniform(-self.cfg.reset_jitter, self.cfg.reset_jitter, N_JOINTS)
        self._joint_pos = np.clip(self._home + jitter, -self._joint_limit, self._joint_limit)
        self._joint_vel = np.zeros(N_JOINTS)
        self._grip_width = float(self.cfg.home_grip_width)
        self._door = DoorState()
        self._hinge_world = np.asarray(self.cfg.hinge_pos, dtype=np.float64) \
            + np.array([params.table_offset_x, params.table_offset_y, 0.0])
        self._target_angles = fixed_axis_angles(target_grip_rotation())
        ee_pos, ee_rot = forward_kinematics(self._joint_pos)
        self._ee_pos, self._ee_rot = ee_pos, ee_rot
        self._ee_vel = np.zeros(3)
        self._step_count = 0
        self._done = False
        self.episode_max_angle = 0.0
        self.last_contact = self._contacts()
        self.last_terms = np.zeros(5)
        return self._observe()

    def _contacts(self) -> ContactResult:
        return compute_contacts(self._ee_pos, self._ee_rot, self._grip_width, self._ee_vel,
                                self._hinge_world, self._door, self.params, self.cfg,
                                self.geometry)

    def _tactile_bits(self, contact: ContactResult) -> np.ndarray:
        signal = tactile.scale_signal(contact.per_unit_force, self.cfg.signal_scale)
        return tactile.binarize(signal, self.kappa)

    def _observe(self) -> np.ndarray:
        knob = knob_center(self._hinge_world, self._door.hinge_angle)
        obs = np.concatenate([
            self._ee_pos,
            self._ee_vel,
            self._joint_pos,
            self._joint_vel,
            [self._grip_width],
            knob - self._ee_pos,
            [self._door.hinge_angle],
        ])
        if self.cfg.tactile_enabled:
            obs = np.concatenate([obs, self._tactile_bits(self.last_contact).astype(np.float64)])
        return obs

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool, dict]:
        if self._done:
            raise ContractError("step after episode end; call reset first")
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (ACTION_DIM,):
            raise ContractError(f"action shape {a.shape}, expected {(ACTION_DIM,)}")
        a = np.clip(a, -1.0, 1.0)

        q_old = self._joint_pos
        q_new = np.clip(q_old + a[:N_JOINTS] * self._vel_limit * self.cfg.dt,
                        -self._joint_limit, self._joint_limit)
        self._joint_vel = (q_new - q_old) / self.cfg.dt
        self._joint_pos = q_new
        self._grip_width = float(np.clip(self._grip_width + a[7] * self.cfg.grip_rate * self.cfg.dt,
                                         0.0, self.cfg.grip_width_max))

        ee_pos, ee_rot = forward_kinematics(q_new)
        self._ee_vel = (ee_pos - self._ee_pos) / self.cfg.dt
        self._ee_pos, self._ee_rot = ee_pos, ee_rot

        contact = self._contacts()
        self.last_contact = contact
        self._door = hinge_step(self._door, contact.applied_torque, self.params, self.cfg.dt)
        self.episode_max_angle = max(self.episode_max_angle, self._door.hinge_angle)

        knob = knob_center(self._hinge_world, self._door.hinge_angle)
        bits = self._tactile_bits(contact) if self.cfg.tactile_enabled else None
        total, terms = compute_reward(
            self._door.hinge_angle, contact.knob_in_grasp, knob, ee_pos,
            self._target_angles, fixed_axis_angles(ee_rot),
            bits, self.cfg.reward_weights,
        )
        self.last_terms = terms

        self._step_count += 1
        self._done = bool(self._door.hinge_angle >= DOOR_ANGLE_MAX
                          or self._step_count >= self.cfg.max_steps)
        info = {
            "contact": contact,
            "door": replace(self._door),
            "reward_terms": terms,
        }
        return self._observe(), total, self._done, info

    # ------------------------------------------------------------ trajectory

    def trajectory_columns(self) -> list[str]:
        cols = ["step"]
        for name, size in OBSERVATION_LAYOUT:
            if name == "tactile" and not self.cfg.tactile_enabled:
                continue
            cols += [f"obs_{name}" if size == 1 else f"obs_{name}_{k}" for k in range(size)] \
                if size > 1 else [f"obs_{name}"]
        cols += [f"act_{k}" for k in range(ACTION_DIM)]
        cols += ["reward", "term_door", "term_dist", "term_ori", "term_grasp", "term_tactile",
                 "hinge_angle_deg", "knob_in_grasp", "slipping"]
        return cols

    def trajectory_row(self, step, obs, action, reward_total, terms, info) -> list:
        contact = info["contact"]
        door = info["door"]
        return [step, *obs.tolist(), *np.asarray(action, dtype=np.float64).tolist(),
                reward_total, *terms.tolist(),
                math.degrees(door.hinge_angle), int(contact.knob_in_grasp), int(contact.slipping)]
