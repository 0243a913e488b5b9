"""Experiment orchestration: training runs, evaluation, calibration, reports.

A run configuration is a JSON file validated against a fixed schema (unknown
keys are rejected with their dotted path). Training produces one run
directory per seed per condition, each self-describing:

    <out>/<condition>-seed<k>/
        config.json        resolved configuration, shared by all runs
        manifest.json      config hash, dims, status, versions
        training_log.csv   one row per episode, with the episode's dynamics draw
        checkpoint/        final policy bundle
        resume/            optimizer + replay snapshot (only if checkpointing)

Every artifact is reproducible from config + seed alone; manifests carry the
config hash so a resumed or reported run cannot silently drift. Evaluation
loads a checkpoint read-only and rolls the deterministic policy (no
exploration noise) on one of three domains:

    nominal    fixed default dynamics, no randomization
    train      the training distribution (episode-scale draws + step noise)
    transfer   a held-out configuration outside the training ranges

Reports aggregate run directories into comparison tables, learning curves,
tactile activation counts, and the relative improvement of the tactile
condition over the plain one, with a bootstrap interval. All CSVs have a
header row and a fixed column order; floats are written with 17 significant
digits so values round-trip exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import shutil
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, nn, tactile, td3
from .env import BASE_OBS_DIM, DoorEnv, EnvConfig
from .errors import ConfigError, ContractError
from .randomize import PARAM_FIELDS, RandConfig, RandomizedEnv, TransferEnv
from .reward import TERM_NAMES
from .td3 import Td3Config

# reporting convention: an episode "opened the door" once alpha reaches this
OPEN_THRESHOLD_DEG = 10.0

CONDITIONS = ("tactile", "no_tactile")

# Reference numbers from the full-scale study (25000 episodes x 1000 steps,
# plus hardware trials). Desk-scale runs are not expected to reproduce them;
# reports carry them as a labeled reference section only.
FULL_SCALE_REFERENCE = (
    {"domain": "sim", "condition": "tactile", "door_angle": "41.8 +- 15.7",
     "angle_min_max": "0.6 / 90.0", "steps": "720.5 +- 234.4",
     "reward": "2435.6 +- 1024.6"},
    {"domain": "sim", "condition": "no_tactile", "door_angle": "34.6 +- 20.3",
     "angle_min_max": "1.3 / 90.0", "steps": "584.4 +- 273.4",
     "reward": "1881.8 +- 1363.3"},
    {"domain": "real", "condition": "tactile", "door_angle": "31.2 +- 14.0",
     "angle_min_max": "14.2 / 70.8", "steps": "176.3 +- 25.8", "reward": "-"},
    {"domain": "real", "condition": "no_tactile", "door_angle": "21.5 +- 18.9",
     "angle_min_max": "3.3 / 68.2", "steps": "275.6 +- 167.2", "reward": "-"},
)
FULL_SCALE_IMPROVEMENT_PCT = 45.0


# ------------------------------------------------------------ configuration

@dataclass(frozen=True)
class EnvironmentBlock:
    dt: float = 0.01
    reset_jitter: float = 0.01


@dataclass(frozen=True)
class Td3Block:
    hidden: tuple = (64, 64)
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    target_noise_std: float = 0.2
    target_noise_clip: float = 0.5
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    warmup_steps: int = 1000
    explore_sigma_start: float = 0.3
    explore_sigma_end: float = 0.05
    step_size: float = 3e-4
    publish_every: int = 50


@dataclass(frozen=True)
class RandomizationBlock:
    enabled: bool = True
    delay_prob: float = 0.5


@dataclass(frozen=True)
class TactileBlock:
    enabled: bool = True
    kappa: float = tactile.NOMINAL_THRESHOLD
    signal_scale: float = 1.0
    flip_prob: float = 0.005


@dataclass(frozen=True)
class RunConfig:
    environment: EnvironmentBlock = field(default_factory=EnvironmentBlock)
    td3: Td3Block = field(default_factory=Td3Block)
    randomization: RandomizationBlock = field(default_factory=RandomizationBlock)
    tactile: TactileBlock = field(default_factory=TactileBlock)
    seeds: tuple = (0, 1, 2)
    episodes: int = 2000
    max_steps: int = 300
    workers: int = 2
    checkpoint_every: int = 0
    output_dir: str = "runs"

    def conditions(self) -> tuple:
        """Training arms: with tactile disabled only the plain arm exists."""
        return CONDITIONS if self.tactile.enabled else ("no_tactile",)

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds: must list at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds: duplicate entries in {list(self.seeds)}")
        if self.episodes < 1:
            raise ConfigError(f"episodes: must be >= 1, got {self.episodes}")
        if self.max_steps < 0:
            raise ConfigError(f"max_steps: must be >= 0, got {self.max_steps}")
        if self.workers < 1:
            raise ConfigError(f"workers: must be >= 1, got {self.workers}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every: must be >= 0, got {self.checkpoint_every}")
        if self.environment.dt <= 0.0:
            raise ConfigError(f"environment.dt: must be > 0, got {self.environment.dt}")
        if not self.td3.hidden:
            raise ConfigError("td3.hidden: needs at least one layer width")
        if not 0.0 <= self.tactile.flip_prob <= 1.0:
            raise ConfigError(f"tactile.flip_prob: must be in [0, 1], got {self.tactile.flip_prob}")
        if not 0.0 <= self.randomization.delay_prob <= 1.0:
            raise ConfigError(
                f"randomization.delay_prob: must be in [0, 1], got {self.randomization.delay_prob}")
        if self.tactile.kappa <= 0.0:
            raise ConfigError(f"tactile.kappa: must be > 0, got {self.tactile.kappa}")


def _require_mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
    return value


def _reject_unknown(d: dict, allowed, path: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}; allowed keys are {sorted(allowed)}")


def _scalar(d: dict, key: str, kind, default, path: str):
    """Fetch d[key] as kind; bool is not an int here, ints promote to float."""
    if key not in d:
        return default
    value = d[key]
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}.{key}: expected true/false, got {value!r}")
        return value
    if isinstance(value, bool):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got a boolean")
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _int_list(d: dict, key: str, default, path: str) -> tuple:
    if key not in d:
        return tuple(default)
    value = d[key]
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{path}.{key}: expected a non-empty list of integers")
    for i, item in enumerate(value):
        if isinstance(item, bool) or not isinstance(item, int):
            raise ConfigError(f"{path}.{key}[{i}]: expected an integer, got {item!r}")
    return tuple(value)


_BLOCK_FIELDS = {
    "environment": {"dt": float, "reset_jitter": float},
    "td3": {"hidden": list, "gamma": float, "tau": float, "policy_delay": int,
            "target_noise_std": float, "target_noise_clip": float,
            "batch_size": int, "buffer_capacity": int, "warmup_steps": int,
            "explore_sigma_start": float, "explore_sigma_end": float,
            "step_size": float, "publish_every": int},
    "randomization": {"enabled": bool, "delay_prob": float},
    "tactile": {"enabled": bool, "kappa": float, "signal_scale": float,
                "flip_prob": float},
}
_TOP_FIELDS = ("environment", "td3", "randomization", "tactile", "seeds",
               "episodes", "max_steps", "workers", "checkpoint_every",
               "output_dir")


def _parse_block(d: dict, name: str, cls):
    block = _require_mapping(d.get(name, {}), name)
    spec = _BLOCK_FIELDS[name]
    _reject_unknown(block, spec, name)
    defaults = cls()
    kwargs = {}
    for key, kind in spec.items():
        if kind is list:
            kwargs[key] = _int_list(block, key, getattr(defaults, key), name)
        else:
            kwargs[key] = _scalar(block, key, kind, getattr(defaults, key), name)
    return cls(**kwargs)


def config_from_dict(d: dict) -> RunConfig:
    """Schema validation: wrong types and unknown keys fail with their path."""
    d = _require_mapping(d, "config")
    _reject_unknown(d, _TOP_FIELDS, "config")
    defaults = RunConfig()
    cfg = RunConfig(
        environment=_parse_block(d, "environment", EnvironmentBlock),
        td3=_parse_block(d, "td3", Td3Block),
        randomization=_parse_block(d, "randomization", RandomizationBlock),
        tactile=_parse_block(d, "tactile", TactileBlock),
        seeds=_int_list(d, "seeds", defaults.seeds, "config"),
        episodes=_scalar(d, "episodes", int, defaults.episodes, "config"),
        max_steps=_scalar(d, "max_steps", int, defaults.max_steps, "config"),
        workers=_scalar(d, "workers", int, defaults.workers, "config"),
        checkpoint_every=_scalar(d, "checkpoint_every", int,
                                 defaults.checkpoint_every, "config"),
        output_dir=_scalar(d, "output_dir", str, defaults.output_dir, "config"),
    )
    cfg.validate()
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["td3"]["hidden"] = list(cfg.td3.hidden)
    d["seeds"] = list(cfg.seeds)
    return d


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}")
    return config_from_dict(raw)


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# --------------------------------------------------- config -> module configs

def build_env_config(cfg: RunConfig, tactile_on: bool) -> EnvConfig:
    return replace(EnvConfig(),
                   dt=cfg.environment.dt,
                   reset_jitter=cfg.environment.reset_jitter,
                   max_steps=cfg.max_steps,
                   tactile_enabled=tactile_on,
                   kappa=cfg.tactile.kappa,
                   signal_scale=cfg.tactile.signal_scale)


def build_rand_config(cfg: RunConfig) -> RandConfig:
    if not cfg.randomization.enabled:
        return RandConfig.disabled()
    return replace(RandConfig(),
                   delay_prob=cfg.randomization.delay_prob,
                   flip_prob=cfg.tactile.flip_prob)


def build_td3_config(cfg: RunConfig, obs_dim: int, act_dim: int) -> Td3Config:
    b = cfg.td3
    return Td3Config(obs_dim=obs_dim, act_dim=act_dim, hidden=tuple(b.hidden),
                     gamma=b.gamma, tau=b.tau, policy_delay=b.policy_delay,
                     target_noise_std=b.target_noise_std,
                     target_noise_clip=b.target_noise_clip,
                     batch_size=b.batch_size, buffer_capacity=b.buffer_capacity,
                     warmup_steps=b.warmup_steps,
                     explore_sigma_start=b.explore_sigma_start,
                     explore_sigma_end=b.explore_sigma_end,
                     step_size=b.step_size, publish_every=b.publish_every,
                     total_steps=cfg.episodes * cfg.max_steps)


def make_env_factory(cfg: RunConfig, tactile_on: bool, seed: int):
    """Per-worker constructor: worker w trains on its own randomization root."""
    env_cfg = build_env_config(cfg, tactile_on)
    rand_cfg = build_rand_config(cfg)

    def factory(worker: int):
        return RandomizedEnv(DoorEnv(env_cfg), rand_cfg, seed=seed * 1000 + worker)

    return factory


# ------------------------------------------------------------------ training

_LOG_COLUMNS = ("episode", "worker", "env_steps", "length", "return", "sigma",
                "max_angle_deg", "wall_time_s") + PARAM_FIELDS


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _versions() -> dict:
    return {"touchdoor": __version__, "numpy": np.__version__,
            "python": platform.python_version()}


def run_dir_name(condition: str, seed: int) -> str:
    return f"{condition}-seed{seed}"


def _write_manifest(run_dir: Path, manifest: dict) -> None:
    with open(run_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _read_manifest(run_dir: Path) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise ConfigError(f"{run_dir} has no manifest.json; not a run directory")
    with open(path) as f:
        return json.load(f)


def _log_row(record: td3.EpisodeRecord, episode: int, wall_time: float) -> list:
    params = record.params or {}
    angle = record.max_hinge_angle or 0.0
    return [episode, record.worker, record.env_steps, record.length,
            record.ret, record.sigma, float(np.degrees(angle)), wall_time,
            *[params.get(name, 0.0) for name in PARAM_FIELDS]]


def train_single_run(cfg: RunConfig, seed: int, condition: str, out_root,
                     workers: int | None = None,
                     deterministic: bool = False) -> Path:
    """One (seed, condition) arm: logs, final checkpoint, resume snapshots.

    An existing completed run with a matching config hash is left untouched;
    a hash mismatch refuses; an interrupted run with a resume snapshot picks
    up where it stopped.
    """
    if condition not in CONDITIONS:
        raise ConfigError(f"condition must be one of {CONDITIONS}, got {condition!r}")
    cfg.validate()
    workers = cfg.workers if workers is None else workers
    if deterministic:
        workers = 1
    if cfg.checkpoint_every > 0 and workers != 1:
        # snapshots are taken from the episode callback, which in threaded
        # mode fires concurrently with learner updates
        raise ConfigError("checkpoint_every > 0 requires a single worker")
    run_dir = Path(out_root) / run_dir_name(condition, seed)
    digest = config_hash(cfg)

    tactile_on = condition == "tactile"
    factory = make_env_factory(cfg, tactile_on, seed)
    probe = factory(0)
    td3_cfg = build_td3_config(cfg, probe.obs_dim, probe.act_dim)

    resumable = False
    if (run_dir / "manifest.json").exists():
        manifest = _read_manifest(run_dir)
        if manifest["config_hash"] != digest:
            raise ConfigError(
                f"{run_dir} was produced by config {manifest['config_hash'][:12]}, "
                f"refusing to continue it with config {digest[:12]}")
        if manifest["status"] == "complete":
            return run_dir
        resumable = (run_dir / "resume" / "trainer_counters.json").exists()

    start_step = 0
    episode_base = 0
    log_rows: list[list] = []
    buffer = td3.ReplayBuffer(td3_cfg.buffer_capacity, td3_cfg.obs_dim,
                              td3_cfg.act_dim)
    if resumable:
        resume = run_dir / "resume"
        state, _ = td3.load_checkpoint(resume / "policy", td3_cfg)
        counters = td3.load_trainer_state(resume, state, buffer)
        start_step = int(counters["env_steps"])
        episode_base = int(counters["episodes"])
        log_rows = _read_log_rows(run_dir / "training_log.csv", episode_base)
    else:
        state = td3.initial_state(td3_cfg, seed, workers)
        if (run_dir / "resume").exists():
            shutil.rmtree(run_dir / "resume")  # stale snapshot from a dead run

    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")
    manifest = {"config_hash": digest, "condition": condition, "seed": seed,
                "obs_dim": td3_cfg.obs_dim, "act_dim": td3_cfg.act_dim,
                "status": "running", "env_steps": start_step,
                "episodes": episode_base, "versions": _versions()}
    _write_manifest(run_dir, manifest)
    _write_csv(run_dir / "training_log.csv", _LOG_COLUMNS, log_rows)

    last_mark = time.perf_counter()

    def on_episode(record: td3.EpisodeRecord) -> None:
        # wall_time_s is the delta between episode completions; with several
        # workers finishing close together it is approximate
        nonlocal last_mark
        now = time.perf_counter()
        wall = 0.0 if deterministic else now - last_mark
        last_mark = now
        episode = episode_base + record.index + 1
        log_rows.append(_log_row(record, episode, wall))
        if cfg.checkpoint_every > 0 and episode % cfg.checkpoint_every == 0:
            _save_resume(run_dir, state, buffer, td3_cfg,
                         env_steps=record.env_steps, episodes=episode)
            _write_csv(run_dir / "training_log.csv", _LOG_COLUMNS, log_rows)

    result = td3.train(factory, td3_cfg, seed=seed, workers=workers,
                       deterministic=deterministic, state=state, buffer=buffer,
                       start_step=start_step, episode_cb=on_episode)

    _write_csv(run_dir / "training_log.csv", _LOG_COLUMNS, log_rows)
    td3.save_checkpoint(run_dir / "checkpoint", result.state, td3_cfg,
                        extra={"condition": condition, "seed": seed,
                               "config_hash": digest})
    manifest.update(status="complete", env_steps=result.env_steps,
                    episodes=episode_base + len(result.episodes))
    _write_manifest(run_dir, manifest)
    return run_dir


def _read_log_rows(path: Path, up_to_episode: int) -> list[list]:
    """Rows already logged before a resume point, with types restored."""
    if not Path(path).exists():
        return []
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != list(_LOG_COLUMNS):
            raise ConfigError(f"{path} has unexpected columns; refusing to resume")
        for raw in reader:
            row = [int(raw[0]), int(raw[1]), int(raw[2]), int(raw[3]),
                   float(raw[4]), float(raw[5]), float(raw[6]), float(raw[7]),
                   *[float(v) for v in raw[8:]]]
            if row[0] <= up_to_episode:
                rows.append(row)
    return rows


def _save_resume(run_dir: Path, state, buffer, td3_cfg, env_steps: int,
                 episodes: int) -> None:
    resume = run_dir / "resume"
    resume.mkdir(parents=True, exist_ok=True)
    td3.save_checkpoint(resume / "policy", state, td3_cfg)
    td3.save_trainer_state(resume, state, buffer,
                           {"env_steps": env_steps, "episodes": episodes})


def cmd_train(cfg: RunConfig, seed: int | None = None,
              workers: int | None = None, deterministic: bool = False,
              out: str | None = None) -> list[Path]:
    """All training arms: every seed crossed with every condition."""
    cfg.validate()
    out_root = Path(out if out is not None else cfg.output_dir)
    seeds = cfg.seeds if seed is None else (seed,)
    return [train_single_run(cfg, s, condition, out_root, workers, deterministic)
            for s in seeds for condition in cfg.conditions()]


# ---------------------------------------------------------------- evaluation

@dataclass
class EpisodeStats:
    episode: int
    final_alpha_deg: float
    max_alpha_deg: float
    steps_to_open: int
    episode_return: float
    length: int
    term_sums: np.ndarray  # weighted contribution of each reward term

    def validate(self) -> None:
        if not 0.0 <= self.final_alpha_deg <= 90.0 + 1e-9:
            raise ContractError(f"final angle {self.final_alpha_deg} outside [0, 90] deg")


_EVAL_COLUMNS = ("episode", "final_angle_deg", "max_angle_deg", "steps_to_open",
                 "return", "length") + tuple(f"term_{n}" for n in TERM_NAMES)

EVAL_DOMAINS = ("nominal", "train", "transfer")


def build_eval_env(cfg: RunConfig, domain: str, tactile_on: bool, seed: int):
    env_cfg = build_env_config(cfg, tactile_on)
    if domain == "nominal":
        return DoorEnv(env_cfg)
    if domain == "train":
        return RandomizedEnv(DoorEnv(env_cfg), build_rand_config(cfg), seed=seed)
    if domain == "transfer":
        return TransferEnv(env_cfg)
    raise ConfigError(f"domain must be one of {EVAL_DOMAINS}, got {domain!r}")


def _inner_door_env(env) -> DoorEnv:
    return env if isinstance(env, DoorEnv) else env.env


def rollout_policy(actor: nn.MlpParams, env, domain: str, episodes: int,
                   seed: int, max_steps: int | None = None,
                   weights_array: np.ndarray | None = None):
    """Deterministic policy rollouts.

    Returns (stats list, tactile activation counts or None, first-episode
    trajectory rows). The step budget defaults to the environment's.
    """
    inner = _inner_door_env(env)
    budget = inner.cfg.max_steps if max_steps is None else max_steps
    if weights_array is None:
        weights_array = inner.cfg.reward_weights.as_array()
    tactile_on = inner.cfg.tactile_enabled
    counts = np.zeros(tactile.N_UNITS, dtype=np.int64) if tactile_on else None
    total_steps = 0
    seed_rng = np.random.default_rng(seed)
    stats: list[EpisodeStats] = []
    trajectory: list[list] = []

    for ep in range(episodes):
        ep_seed = int(seed_rng.integers(2**63))
        obs = env.reset() if domain == "train" else env.reset(seed=ep_seed)
        ep_return = 0.0
        term_sums = np.zeros(len(TERM_NAMES))
        final_angle = 0.0
        steps_to_open = budget
        length = 0
        for step in range(budget):
            action = nn.forward(actor, obs)
            obs, reward, done, info = env.step(action)
            if ep == 0:
                trajectory.append(inner.trajectory_row(
                    step, obs, action, reward, info["reward_terms"], info))
            if tactile_on:
                counts += obs[inner.tactile_slice].astype(np.int64)
            ep_return += reward
            term_sums += weights_array * info["reward_terms"]
            angle_deg = float(np.degrees(info["door"].hinge_angle))
            final_angle = angle_deg
            if angle_deg >= OPEN_THRESHOLD_DEG and steps_to_open == budget:
                steps_to_open = step + 1
            length = step + 1
            total_steps += 1
            if done:
                break
        stat = EpisodeStats(episode=ep, final_alpha_deg=final_angle,
                            max_alpha_deg=float(np.degrees(env.episode_max_angle)),
                            steps_to_open=steps_to_open,
                            episode_return=ep_return, length=length,
                            term_sums=term_sums)
        stat.validate()
        stats.append(stat)
    return stats, counts, total_steps, trajectory


def summarize_stats(stats: list) -> dict:
    angles = np.array([s.final_alpha_deg for s in stats])
    return {
        "episodes": len(stats),
        "final_angle_deg_mean": float(angles.mean()),
        "final_angle_deg_std": float(angles.std()),
        "final_angle_deg_min": float(angles.min()),
        "final_angle_deg_max": float(angles.max()),
        "steps_to_open_mean": float(np.mean([s.steps_to_open for s in stats])),
        "return_mean": float(np.mean([s.episode_return for s in stats])),
        "return_std": float(np.std([s.episode_return for s in stats])),
    }


def cmd_eval(run_dir, domain: str = "transfer", episodes: int = 10,
             seed: int = 1000, max_steps: int | None = None,
             out=None) -> dict:
    """Evaluate a run's final checkpoint on one domain; never mutates it.

    Writes eval_<domain>.csv (per episode), eval_<domain>_summary.json, the
    first episode's full trajectory, and tactile activation counts when the
    policy has tactile input.
    """
    run_dir = Path(run_dir)
    if episodes < 1:
        raise ConfigError(f"episodes: must be >= 1, got {episodes}")
    manifest = _read_manifest(run_dir)
    cfg = load_config(run_dir / "config.json")
    tactile_on = manifest["condition"] == "tactile"
    env = build_eval_env(cfg, domain, tactile_on, seed)

    td3_cfg = build_td3_config(cfg, env.obs_dim, env.act_dim)
    try:
        state, _ = td3.load_checkpoint(run_dir / "checkpoint", td3_cfg)
    except ContractError as e:
        raise ContractError(
            f"checkpoint at {run_dir} does not fit the {domain} domain "
            f"(observation width {env.obs_dim}): {e}")

    stats, counts, total_steps, trajectory = rollout_policy(
        state.actor, env, domain, episodes, seed, max_steps)

    out_dir = Path(out) if out is not None else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [[s.episode, s.final_alpha_deg, s.max_alpha_deg, s.steps_to_open,
             s.episode_return, s.length, *s.term_sums.tolist()] for s in stats]
    _write_csv(out_dir / f"eval_{domain}.csv", _EVAL_COLUMNS, rows)

    summary = {"domain": domain, "condition": manifest["condition"],
               "seed": seed, "eval_seed": seed, "run_seed": manifest["seed"],
               "config_hash": manifest["config_hash"],
               "open_threshold_deg": OPEN_THRESHOLD_DEG, **summarize_stats(stats)}
    with open(out_dir / f"eval_{domain}_summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")

    inner = _inner_door_env(env)
    _write_csv(out_dir / f"eval_{domain}_trajectory.csv",
               inner.trajectory_columns(), trajectory)
    if counts is not None:
        _write_csv(out_dir / f"eval_{domain}_tactile.csv",
                   ("unit", "activations", "steps"),
                   [[u, int(counts[u]), total_steps] for u in range(tactile.N_UNITS)])
    return summary


# --------------------------------------------------------------- calibration

def load_press_profiles(path) -> tuple:
    path = Path(path)
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"profiles file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}")
    if not isinstance(raw, list):
        raise ConfigError(f"{path}: expected a list of press profiles")
    profiles = []
    for i, entry in enumerate(raw):
        entry = _require_mapping(entry, f"profiles[{i}]")
        _reject_unknown(entry, ("position_mm", "weight_g", "size_mm"), f"profiles[{i}]")
        for key in ("position_mm", "weight_g"):
            if key not in entry:
                raise ConfigError(f"profiles[{i}]: missing required key {key!r}")
        profiles.append(tactile.PressProfile(
            position_mm=_scalar(entry, "position_mm", float, None, f"profiles[{i}]"),
            weight_g=_scalar(entry, "weight_g", float, None, f"profiles[{i}]"),
            size_mm=_scalar(entry, "size_mm", float, 100.0, f"profiles[{i}]")))
    return tuple(profiles)


def cmd_calibrate(profiles_path=None, out="calibration") -> tactile.CalibrationResult:
    """Threshold fit from rig presses; default grid is 3 positions x 4 weights."""
    profiles = (tactile.RIG_PRESS_GRID if profiles_path is None
                else load_press_profiles(profiles_path))
    result = tactile.calibrate_thresholds(profiles)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)

    activation = result.activation()
    report = {
        "nominal_threshold": tactile.NOMINAL_THRESHOLD,
        "scale": result.scale,
        "kappa": result.kappa.tolist(),
        "profiles": [
            {"position_mm": p.position_mm, "weight_g": p.weight_g,
             "size_mm": p.size_mm,
             "activation": activation[i].astype(int).tolist(),
             "active_units": int(activation[i].sum())}
            for i, p in enumerate(result.profiles)],
    }
    with open(out_dir / "calibration.json", "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")

    rows = []
    n_units = result.signals.shape[1]
    for i, p in enumerate(result.profiles):
        for u in range(n_units):
            rows.append([p.position_mm, p.weight_g, u, result.signals[i, u],
                         int(result.loaded[i, u]), int(activation[i, u])])
    _write_csv(out_dir / "signals.csv",
               ("position_mm", "weight_g", "unit", "signal", "loaded", "active"),
               rows)
    return result


# ------------------------------------------------------------------- reports

def _read_eval_rows(run_dir: Path, domain: str) -> list[dict] | None:
    path = run_dir / f"eval_{domain}.csv"
    if not path.exists():
        return None
    rows = []
    with open(path, newline="") as f:
        for raw in csv.DictReader(f):
            rows.append({k: float(v) for k, v in raw.items()})
    return rows


def _read_training_log(run_dir: Path) -> list[dict]:
    path = run_dir / "training_log.csv"
    if not path.exists():
        return []
    with open(path, newline="") as f:
        return [{k: float(v) for k, v in raw.items()} for raw in csv.DictReader(f)]


def bootstrap_improvement(tactile_angles, plain_angles, n_resamples: int = 10_000,
                          seed: int = 0) -> dict:
    """Relative improvement of mean final angle with a bootstrap 90% interval.

    Episodes are resampled with replacement within each condition; resamples
    whose plain mean is zero cannot define a relative change and are dropped
    (their count is reported).
    """
    t = np.asarray(tactile_angles, dtype=np.float64)
    p = np.asarray(plain_angles, dtype=np.float64)
    if t.size == 0 or p.size == 0:
        raise ConfigError("bootstrap needs at least one episode per condition")
    mean_t, mean_p = t.mean(), p.mean()
    point = None if mean_p == 0.0 else float((mean_t - mean_p) / mean_p * 100.0)

    rng = np.random.default_rng(seed)
    draws_t = t[rng.integers(0, t.size, (n_resamples, t.size))].mean(axis=1)
    draws_p = p[rng.integers(0, p.size, (n_resamples, p.size))].mean(axis=1)
    valid = draws_p > 0.0
    dropped = int(n_resamples - valid.sum())
    interval = None
    if valid.any():
        imps = (draws_t[valid] - draws_p[valid]) / draws_p[valid] * 100.0
        interval = [float(np.percentile(imps, 5.0)), float(np.percentile(imps, 95.0))]
    return {"improvement_pct": point, "interval_90_pct": interval,
            "resamples": n_resamples, "degenerate_resamples": dropped,
            "mean_tactile_deg": float(mean_t), "mean_plain_deg": float(mean_p)}


def _condition_summary(rows: list[dict]) -> dict:
    angles = np.array([r["final_angle_deg"] for r in rows])
    return {
        "episodes": len(rows),
        "door_angle_mean": float(angles.mean()),
        "door_angle_std": float(angles.std()),
        "angle_min": float(angles.min()),
        "angle_max": float(angles.max()),
        "steps_mean": float(np.mean([r["steps_to_open"] for r in rows])),
        "reward_mean": float(np.mean([r["return"] for r in rows])),
        "reward_std": float(np.std([r["return"] for r in rows])),
    }


def _comparison_text(table_rows: list[dict], improvements: dict) -> str:
    """Fixed-layout comparison table; one row per domain and condition."""
    header = ["Domain", "Condition", "Door Angle", "Angle Min/Max", "Steps", "Reward"]
    lines = []
    body = []
    for row in table_rows:
        body.append([
            row["domain"], row["condition"],
            f"{row['door_angle_mean']:.1f} +- {row['door_angle_std']:.1f}",
            f"{row['angle_min']:.1f} / {row['angle_max']:.1f}",
            f"{row['steps_mean']:.1f}",
            f"{row['reward_mean']:.1f} +- {row['reward_std']:.1f}",
        ])
    for ref in FULL_SCALE_REFERENCE:
        body.append([f"reference:{ref['domain']}", ref["condition"],
                     ref["door_angle"], ref["angle_min_max"], ref["steps"],
                     ref["reward"]])
    widths = [max(len(header[i]), *(len(r[i]) for r in body)) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines.append(fmt.format(*header))
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append(fmt.format(*r))
    lines.append("")
    lines.append(f"steps_to_open threshold: {OPEN_THRESHOLD_DEG:.0f} deg; "
                 "reference rows are full-scale study values, not desk-scale targets "
                 f"(full-scale improvement {FULL_SCALE_IMPROVEMENT_PCT:.0f}%).")
    for domain, imp in improvements.items():
        if imp["improvement_pct"] is not None:
            lines.append(
                f"{domain}: tactile improves mean final angle by "
                f"{imp['improvement_pct']:.1f}% "
                f"(90% bootstrap interval [{imp['interval_90_pct'][0]:.1f}%, "
                f"{imp['interval_90_pct'][1]:.1f}%])")
    return "\n".join(lines) + "\n"


def cmd_report(run_dirs, out="report", seed: int = 0) -> dict:
    """Aggregate completed runs into comparison artifacts.

    All runs must share one config hash; mixed configs are refused with the
    per-directory hashes. Emits report.json, comparison.csv, a fixed-layout
    comparison table, per-condition learning curves, and tactile activation
    counts.
    """
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise ConfigError("report needs at least one run directory")
    manifests = {d: _read_manifest(d) for d in run_dirs}
    hashes = {d: m["config_hash"] for d, m in manifests.items()}
    if len(set(hashes.values())) > 1:
        detail = "\n".join(f"  {d}: {h}" for d, h in sorted(hashes.items()))
        raise ConfigError(f"run directories mix different configs:\n{detail}")
    incomplete = [str(d) for d, m in manifests.items() if m["status"] != "complete"]
    if incomplete:
        raise ConfigError(f"runs not complete: {incomplete}")

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)

    by_condition: dict[str, list[Path]] = {}
    for d, m in manifests.items():
        by_condition.setdefault(m["condition"], []).append(d)

    # per-domain, per-condition episode pools across seeds
    table_rows = []
    pools: dict[str, dict[str, list[float]]] = {}
    per_run = []
    for domain in EVAL_DOMAINS:
        for condition in sorted(by_condition):
            rows_all = []
            for d in sorted(by_condition[condition]):
                rows = _read_eval_rows(d, domain)
                if rows is None:
                    continue
                rows_all.extend(rows)
                angles = [r["final_angle_deg"] for r in rows]
                per_run.append({"run": d.name, "condition": condition,
                                "seed": manifests[d]["seed"], "domain": domain,
                                "episodes": len(rows),
                                "final_angle_deg_mean": float(np.mean(angles))})
            if rows_all:
                pools.setdefault(domain, {})[condition] = \
                    [r["final_angle_deg"] for r in rows_all]
                table_rows.append({"domain": domain, "condition": condition,
                                   **_condition_summary(rows_all)})

    improvements = {}
    for domain, by_cond in pools.items():
        if "tactile" in by_cond and "no_tactile" in by_cond:
            improvements[domain] = bootstrap_improvement(
                by_cond["tactile"], by_cond["no_tactile"], seed=seed)

    _write_csv(out_dir / "comparison.csv",
               ("domain", "condition", "episodes", "door_angle_mean",
                "door_angle_std", "angle_min", "angle_max", "steps_mean",
                "reward_mean", "reward_std"),
               [[r["domain"], r["condition"], r["episodes"], r["door_angle_mean"],
                 r["door_angle_std"], r["angle_min"], r["angle_max"],
                 r["steps_mean"], r["reward_mean"], r["reward_std"]]
                for r in table_rows])
    with open(out_dir / "comparison_table.txt", "w") as f:
        f.write(_comparison_text(table_rows, improvements))

    # learning curves: align episodes across seeds up to the shortest log
    for condition, dirs in sorted(by_condition.items()):
        logs = [_read_training_log(d) for d in sorted(dirs)]
        logs = [log for log in logs if log]
        if not logs:
            continue
        n = min(len(log) for log in logs)
        rows = []
        for i in range(n):
            rets = [log[i]["return"] for log in logs]
            angs = [log[i]["max_angle_deg"] for log in logs]
            rows.append([i + 1, len(logs), float(np.mean(rets)), float(np.std(rets)),
                         float(np.mean(angs)), float(np.std(angs))])
        _write_csv(out_dir / f"learning_curve_{condition}.csv",
                   ("episode", "runs", "return_mean", "return_std",
                    "max_angle_deg_mean", "max_angle_deg_std"), rows)

    # tactile activation heat map counts, summed across tactile runs
    heat = np.zeros(tactile.N_UNITS, dtype=np.int64)
    heat_steps = 0
    for d in by_condition.get("tactile", []):
        for domain in EVAL_DOMAINS:
            path = d / f"eval_{domain}_tactile.csv"
            if not path.exists():
                continue
            with open(path, newline="") as f:
                rows = list(csv.DictReader(f))
            for row in rows:
                heat[int(row["unit"])] += int(row["activations"])
            heat_steps += int(rows[0]["steps"]) if rows else 0
    if heat_steps:
        _write_csv(out_dir / "tactile_heatmap.csv", ("unit", "activations", "steps"),
                   [[u, int(heat[u]), heat_steps] for u in range(tactile.N_UNITS)])

    report = {
        "config_hash": next(iter(hashes.values())),
        "runs": [{"dir": str(d), "condition": m["condition"], "seed": m["seed"],
                  "env_steps": m["env_steps"], "episodes": m["episodes"]}
                 for d, m in sorted(manifests.items())],
        "open_threshold_deg": OPEN_THRESHOLD_DEG,
        "comparison": table_rows,
        "per_run": per_run,
        "improvement": improvements,
        "reference_full_scale": {"rows": list(FULL_SCALE_REFERENCE),
                                 "improvement_pct": FULL_SCALE_IMPROVEMENT_PCT},
    }
    with open(out_dir / "report.json", "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return report
