"""Domain randomization around the door scene.

Two time scales. Episode-scale draws resample the physical parameters
(friction, hinge coefficients, masses, table offsets) once per reset.
Timestep-scale perturbations run every step, in a fixed order on the
observation: tactile bit flips first, then additive uniform noise on the
non-tactile entries, then a whole-frame one-step delay drawn per step.
Action noise perturbs the seven joint velocity commands, never the gripper.

Disabling any piece must be exact: a fully disabled configuration passes
observations and actions through bit-identically, so a nominal run is the
same with or without the wrapper.

The transfer evaluation domain is a deliberate step outside the training
ranges: stiffer hinge, slipperier knob, softer contacts, a constant +2 mm
bias on the two world-position observations, and a constant two-step
observation delay, with all stochastic perturbations off.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, fields, replace

import numpy as np

from . import tactile
from .env import BASE_OBS_DIM, DoorEnv, EnvConfig, EnvParams, N_JOINTS
from .errors import ContractError


@dataclass(frozen=True)
class Range:
    lo: float
    hi: float
    enabled: bool = True

    def sample(self, rng: np.random.Generator) -> float:
        if not self.enabled:
            return self.midpoint
        return float(rng.uniform(self.lo, self.hi))

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class RandConfig:
    # episode scale
    knob_friction: Range = Range(0.8, 1.0)
    hinge_stiffness: Range = Range(0.1, 0.8)
    hinge_damping: Range = Range(0.1, 0.3)
    hinge_friction_loss: Range = Range(0.0, 1.0)
    door_mass: Range = Range(50.0, 150.0)
    knob_mass: Range = Range(2.0, 10.0)
    table_offset_x: Range = Range(-0.05, 0.05)
    table_offset_y: Range = Range(-0.05, 0.05)
    # timestep scale
    obs_noise: Range = Range(-0.002, 0.002)
    action_noise: Range = Range(-0.01, 0.01)
    delay_prob: float = 0.5
    flip_prob: float = 0.005

    @classmethod
    def disabled(cls) -> "RandConfig":
        kwargs = {}
        for f in fields(cls):
            if isinstance(f.default, Range):
                kwargs[f.name] = replace(f.default, enabled=False)
        kwargs["delay_prob"] = 0.0
        kwargs["flip_prob"] = 0.0
        return cls(**kwargs)

    def validate(self) -> None:
        if not 0.0 <= self.delay_prob <= 1.0:
            raise ContractError(f"delay_prob must be in [0, 1], got {self.delay_prob}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ContractError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Range) and value.hi < value.lo:
                raise ContractError(f"{f.name} range is inverted: [{value.lo}, {value.hi}]")


PARAM_FIELDS = ("knob_friction", "hinge_stiffness", "hinge_damping",
                "hinge_friction_loss", "door_mass", "knob_mass",
                "table_offset_x", "table_offset_y")


def sample_env_params(cfg: RandConfig, rng: np.random.Generator) -> EnvParams:
    return EnvParams(**{name: getattr(cfg, name).sample(rng) for name in PARAM_FIELDS})


def perturb_action(action: np.ndarray, cfg: RandConfig, rng: np.random.Generator) -> np.ndarray:
    if not cfg.action_noise.enabled:
        return action
    noisy = np.array(action, dtype=np.float64, copy=True)
    noisy[:N_JOINTS] += rng.uniform(cfg.action_noise.lo, cfg.action_noise.hi, N_JOINTS)
    return noisy


class ObservationPipeline:
    """Per-episode stateful flip -> noise -> delay chain."""

    def __init__(self, cfg: RandConfig, tactile_enabled: bool):
        self.cfg = cfg
        self.tactile_enabled = tactile_enabled
        self._prev: np.ndarray | None = None

    def reset(self) -> None:
        self._prev = None

    def apply(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = obs
        if self.tactile_enabled and self.cfg.flip_prob > 0.0:
            out = np.array(out, copy=True)
            bits = out[BASE_OBS_DIM:].astype(np.uint8)
            out[BASE_OBS_DIM:] = tactile.flip_bits(bits, self.cfg.flip_prob, rng)
        if self.cfg.obs_noise.enabled:
            out = np.array(out, copy=True) if out is obs else out
            out[:BASE_OBS_DIM] += rng.uniform(self.cfg.obs_noise.lo, self.cfg.obs_noise.hi,
                                              BASE_OBS_DIM)
        delivered = out
        if self.cfg.delay_prob > 0.0:
            delayed = rng.random() < self.cfg.delay_prob
            if delayed and self._prev is not None:
                delivered = self._prev
        self._prev = out
        return delivered


class RandomizedEnv:
    """DoorEnv wrapper owning all randomization streams.

    A single integer seed fans out, per episode, into independent streams for
    the parameter draw, the reset jitter, the action noise, and the
    observation pipeline, so episode k is reproducible regardless of how many
    steps earlier episodes took.
    """

    def __init__(self, env: DoorEnv, cfg: RandConfig | None = None, seed: int = 0):
        cfg = RandConfig() if cfg is None else cfg
        cfg.validate()
        self.env = env
        self.cfg = cfg
        self._root = np.random.SeedSequence(seed)
        self._episode = 0
        self.params: EnvParams | None = None
        self.last_reset_seed: int | None = None
        self._pipeline = ObservationPipeline(cfg, env.cfg.tactile_enabled)
        self._action_rng: np.random.Generator | None = None
        self._obs_rng: np.random.Generator | None = None

    @property
    def obs_dim(self) -> int:
        return self.env.obs_dim

    @property
    def act_dim(self) -> int:
        return self.env.act_dim

    @property
    def max_steps(self) -> int:
        return self.env.cfg.max_steps

    @property
    def episode_max_angle(self) -> float:
        return self.env.episode_max_angle

    def reset(self) -> np.ndarray:
        child = self._root.spawn(1)[0]
        param_seq, reset_seq, action_seq, obs_seq = child.spawn(4)
        self.params = sample_env_params(self.cfg, np.random.default_rng(param_seq))
        self.last_reset_seed = int(np.random.default_rng(reset_seq).integers(2**63))
        self._action_rng = np.random.default_rng(action_seq)
        self._obs_rng = np.random.default_rng(obs_seq)
        self._pipeline.reset()
        self._episode += 1
        obs = self.env.reset(params=self.params, seed=self.last_reset_seed)
        return self._pipeline.apply(obs, self._obs_rng)

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool, dict]:
        noisy = perturb_action(np.asarray(action, dtype=np.float64), self.cfg, self._action_rng)
        obs, reward, done, info = self.env.step(noisy)
        return self._pipeline.apply(obs, self._obs_rng), reward, done, info


TRANSFER_PARAMS = EnvParams(hinge_stiffness=0.9, knob_friction=0.75)
TRANSFER_CONTACT_SCALE = 0.5
TRANSFER_POSITION_BIAS = 0.002
TRANSFER_DELAY_STEPS = 2
# biased observation entries: ee_pos and knob_rel_pos
TRANSFER_BIAS_INDICES = (0, 1, 2, 21, 22, 23)


class TransferEnv:
    """Deterministic out-of-distribution evaluation domain."""

    def __init__(self, base_config: EnvConfig | None = None):
        cfg = base_config or EnvConfig()
        self.env = DoorEnv(replace(cfg, contact_stiffness_scale=TRANSFER_CONTACT_SCALE))
        self.params = TRANSFER_PARAMS
        self._queue: deque[np.ndarray] = deque()

    @property
    def obs_dim(self) -> int:
        return self.env.obs_dim

    @property
    def act_dim(self) -> int:
        return self.env.act_dim

    @property
    def max_steps(self) -> int:
        return self.env.cfg.max_steps

    @property
    def episode_max_angle(self) -> float:
        return self.env.episode_max_angle

    def _bias(self, obs: np.ndarray) -> np.ndarray:
        out = np.array(obs, copy=True)
        for idx in TRANSFER_BIAS_INDICES:
            out[idx] += TRANSFER_POSITION_BIAS
        return out

    def reset(self, seed: int = 0) -> np.ndarray:
        obs = self._bias(self.env.reset(params=self.params, seed=seed))
        self._queue = deque([obs] * (TRANSFER_DELAY_STEPS + 1),
                            maxlen=TRANSFER_DELAY_STEPS + 1)
        return self._queue[0]

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool, dict]:
        obs, reward, done, info = self.env.step(action)
        self._queue.append(self._bias(obs))
        return self._queue[0], reward, done, info
