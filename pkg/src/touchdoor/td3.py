"""Twin-critic actor-critic learner with delayed policy updates.

The learner keeps six networks: an actor, two critics, and a lagging target
copy of each. Critic targets use the clipped double estimate: the target
actor proposes a smoothed next action (tanh output plus clipped Gaussian
noise, re-clipped to the action box) and the smaller of the two target
critics scores it,

    y = r + gamma * (1 - done) * min(Q1', Q2')(s', a').

Both critics regress on the same y every step; the actor ascends Q1 only
every policy_delay-th update, followed by a Polyak blend of all three
targets. Exploration adds Gaussian noise to the actor output with a standard
deviation that decays linearly over the first half of training, after a
warmup of uniformly random actions.

Collection runs in worker threads feeding a bounded queue while a single
learner thread consumes transitions, one gradient update per environment
step. With a single worker and deterministic=True collection and learning
interleave strictly sequentially, making runs bit-reproducible. Environments
are duck-typed: anything with reset() -> obs, step(a) -> (obs, r, done,
info), obs_dim, act_dim, and max_steps works.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import ContractError, TrainingDiverged

CHECKPOINT_NETS = ("actor", "critic1", "critic2",
                   "target_actor", "target_critic1", "target_critic2")


@dataclass(frozen=True)
class Td3Config:
    obs_dim: int
    act_dim: int
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
    total_steps: int = 100_000
    queue_capacity: int = 10_000
    publish_every: int = 50

    def validate(self) -> None:
        if self.obs_dim < 1 or self.act_dim < 1:
            raise ContractError("obs_dim and act_dim must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ContractError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ContractError(f"tau must be in (0, 1], got {self.tau}")
        if self.policy_delay < 1:
            raise ContractError("policy_delay must be at least 1")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ContractError("buffer_capacity must be at least batch_size")


@dataclass
class Td3State:
    actor: nn.MlpParams
    critic1: nn.MlpParams
    critic2: nn.MlpParams
    target_actor: nn.MlpParams
    target_critic1: nn.MlpParams
    target_critic2: nn.MlpParams
    opt_actor: nn.OptState
    opt_critic1: nn.OptState
    opt_critic2: nn.OptState
    total_updates: int = 0
    actor_updates: int = 0


def build_actor(cfg: Td3Config, rng: np.random.Generator) -> nn.MlpParams:
    dims = (cfg.obs_dim, *cfg.hidden, cfg.act_dim)
    return nn.init_params(dims, "tanh", rng)


def build_critic(cfg: Td3Config, rng: np.random.Generator) -> nn.MlpParams:
    dims = (cfg.obs_dim + cfg.act_dim, *cfg.hidden, 1)
    return nn.init_params(dims, "identity", rng)


def init_state(cfg: Td3Config, rng: np.random.Generator) -> Td3State:
    cfg.validate()
    actor = build_actor(cfg, rng)
    critic1 = build_critic(cfg, rng)
    critic2 = build_critic(cfg, rng)
    return Td3State(
        actor=actor, critic1=critic1, critic2=critic2,
        target_actor=actor.copy(), target_critic1=critic1.copy(),
        target_critic2=critic2.copy(),
        opt_actor=nn.init_opt_state(actor, step_size=cfg.step_size),
        opt_critic1=nn.init_opt_state(critic1, step_size=cfg.step_size),
        opt_critic2=nn.init_opt_state(critic2, step_size=cfg.step_size),
    )


# ------------------------------------------------------------------ replay

class ReplayBuffer:
    """Uniform-sampling ring buffer.

    Storage is float32: transitions are sensor-scale data where single
    precision is ample, and it halves the memory of a million-step buffer.
    Samples are returned as float64 for the learner math.
    """

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ContractError("replay capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.act = np.zeros((capacity, act_dim), dtype=np.float32)
        self.rew = np.zeros(capacity, dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self.size = 0
        self._head = 0

    def add(self, obs, act, rew, next_obs, done) -> None:
        i = self._head
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size == 0:
            raise ContractError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.size, batch_size)
        return {
            "obs": self.obs[idx].astype(np.float64),
            "act": self.act[idx].astype(np.float64),
            "rew": self.rew[idx].astype(np.float64),
            "next_obs": self.next_obs[idx].astype(np.float64),
            "done": self.done[idx].astype(np.float64),
        }


# ----------------------------------------------------------------- updates

def smoothed_target_actions(state: Td3State, next_obs: np.ndarray,
                            noise: np.ndarray) -> np.ndarray:
    """Target-actor action plus caller-supplied (already clipped) noise."""
    raw = nn.forward(state.target_actor, next_obs)
    return np.clip(raw + noise, -1.0, 1.0)


def draw_target_noise(cfg: Td3Config, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    noise = cfg.target_noise_std * rng.standard_normal(shape)
    return np.clip(noise, -cfg.target_noise_clip, cfg.target_noise_clip)


def compute_targets(state: Td3State, batch: dict, noise: np.ndarray,
                    cfg: Td3Config, twin: bool = True) -> np.ndarray:
    """Critic regression targets; twin=False scores with Q1' alone."""
    actions = smoothed_target_actions(state, batch["next_obs"], noise)
    sa = np.concatenate([batch["next_obs"], actions], axis=1)
    q1 = nn.forward(state.target_critic1, sa)[:, 0]
    if twin:
        q2 = nn.forward(state.target_critic2, sa)[:, 0]
        q = np.minimum(q1, q2)
    else:
        q = q1
    return batch["rew"] + cfg.gamma * (1.0 - batch["done"]) * q


def update_critics(state: Td3State, batch: dict, targets: np.ndarray,
                   cfg: Td3Config) -> tuple[float, float]:
    sa = np.concatenate([batch["obs"], batch["act"]], axis=1)
    losses = []
    for name in ("critic1", "critic2"):
        params = getattr(state, name)
        pred = nn.forward(params, sa)[:, 0]
        err = pred - targets
        losses.append(float(np.mean(err * err)))
        output_grad = (2.0 / len(err)) * err[:, None]
        grads, _ = nn.backward(params, sa, output_grad)
        new_params, new_opt = nn.optimizer_step(params, grads,
                                                getattr(state, "opt_" + name))
        setattr(state, name, new_params)
        setattr(state, "opt_" + name, new_opt)
    return losses[0], losses[1]


def actor_loss_and_grads(actor: nn.MlpParams, critic: nn.MlpParams,
                         obs: np.ndarray, obs_dim: int) -> tuple[float, nn.MlpParams]:
    """Loss -mean(Q(s, pi(s))) and its gradient w.r.t. the actor parameters."""
    actions = nn.forward(actor, obs)
    sa = np.concatenate([obs, actions], axis=1)
    q = nn.forward(critic, sa)[:, 0]
    loss = -float(np.mean(q))
    # ascend Q: pull dQ/da out through the critic input, push through the actor
    output_grad = np.full((len(obs), 1), -1.0 / len(obs))
    _, input_grad = nn.backward(critic, sa, output_grad)
    action_grad = input_grad[:, obs_dim:]
    grads, _ = nn.backward(actor, obs, action_grad)
    return loss, grads


def update_actor_and_targets(state: Td3State, batch: dict, cfg: Td3Config) -> float:
    obs = batch["obs"]
    loss, grads = actor_loss_and_grads(state.actor, state.critic1, obs, cfg.obs_dim)
    state.actor, state.opt_actor = nn.optimizer_step(state.actor, grads, state.opt_actor)
    state.actor_updates += 1
    for net in ("actor", "critic1", "critic2"):
        online = getattr(state, net)
        target = getattr(state, "target_" + net)
        setattr(state, "target_" + net, nn.polyak_blend(online, target, cfg.tau))
    return loss


def train_update(state: Td3State, buffer: ReplayBuffer, cfg: Td3Config,
                 sample_rng: np.random.Generator,
                 noise_rng: np.random.Generator) -> dict:
    """One full learner step: sample, critic update, delayed actor update."""
    batch = buffer.sample(cfg.batch_size, sample_rng)
    noise = draw_target_noise(cfg, (cfg.batch_size, cfg.act_dim), noise_rng)
    targets = compute_targets(state, batch, noise, cfg)
    loss1, loss2 = update_critics(state, batch, targets, cfg)
    state.total_updates += 1
    metrics = {"critic1_loss": loss1, "critic2_loss": loss2}
    if state.total_updates % cfg.policy_delay == 0:
        metrics["actor_loss"] = update_actor_and_targets(state, batch, cfg)
    return metrics


# ------------------------------------------------------------- exploration

def exploration_sigma(step: int, cfg: Td3Config) -> float:
    ramp = max(1, cfg.total_steps // 2)
    frac = min(1.0, step / ramp)
    return cfg.explore_sigma_start + frac * (cfg.explore_sigma_end - cfg.explore_sigma_start)


def exploration_action(actor: nn.MlpParams, obs: np.ndarray, sigma: float,
                       rng: np.random.Generator) -> np.ndarray:
    action = nn.forward(actor, obs)
    return np.clip(action + sigma * rng.standard_normal(action.shape), -1.0, 1.0)


# ------------------------------------------------------------- checkpoints

def save_checkpoint(directory, state: Td3State, cfg: Td3Config,
                    extra: dict | None = None) -> None:
    """Bundle of six network files plus a manifest; no timestamps, so two
    saves of identical state produce identical bytes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in CHECKPOINT_NETS:
        nn.save_params(getattr(state, name), directory / f"{name}.tdnn")
    manifest = {
        "format": "td3-bundle",
        "version": 1,
        "obs_dim": cfg.obs_dim,
        "act_dim": cfg.act_dim,
        "hidden": list(cfg.hidden),
        "total_updates": state.total_updates,
        "actor_updates": state.actor_updates,
        "networks": {name: f"{name}.tdnn" for name in CHECKPOINT_NETS},
    }
    if extra:
        manifest.update(extra)
    with open(directory / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(directory, cfg: Td3Config | None = None) -> tuple[Td3State, dict]:
    directory = Path(directory)
    with open(directory / "manifest.json") as f:
        manifest = json.load(f)
    if manifest.get("format") != "td3-bundle":
        raise ContractError(f"{directory} is not a learner checkpoint bundle")
    nets = {name: nn.load_params(directory / manifest["networks"][name])
            for name in CHECKPOINT_NETS}
    if cfg is not None:
        if nets["actor"].layer_dims[0] != cfg.obs_dim \
                or nets["actor"].layer_dims[-1] != cfg.act_dim:
            raise ContractError(
                f"checkpoint actor is {nets['actor'].layer_dims}, config wants "
                f"obs_dim={cfg.obs_dim} act_dim={cfg.act_dim}")
        step_size = cfg.step_size
    else:
        step_size = 3e-4
    state = Td3State(
        **nets,
        opt_actor=nn.init_opt_state(nets["actor"], step_size=step_size),
        opt_critic1=nn.init_opt_state(nets["critic1"], step_size=step_size),
        opt_critic2=nn.init_opt_state(nets["critic2"], step_size=step_size),
        total_updates=int(manifest.get("total_updates", 0)),
        actor_updates=int(manifest.get("actor_updates", 0)),
    )
    return state, manifest


def save_trainer_state(directory, state: Td3State, buffer: ReplayBuffer | None,
                       counters: dict) -> None:
    """Optimizer moments and counters for exact resume; replay optional."""
    directory = Path(directory)
    arrays = {}
    for name in ("actor", "critic1", "critic2"):
        opt = getattr(state, "opt_" + name)
        for l, (mw, vw) in enumerate(zip(opt.m_w, opt.v_w)):
            arrays[f"{name}_mw{l}"] = mw
            arrays[f"{name}_vw{l}"] = vw
        for l, (mb, vb) in enumerate(zip(opt.m_b, opt.v_b)):
            arrays[f"{name}_mb{l}"] = mb
            arrays[f"{name}_vb{l}"] = vb
        counters[f"{name}_opt_steps"] = opt.step_count
    if buffer is not None:
        arrays["buffer_obs"] = buffer.obs[:buffer.size]
        arrays["buffer_act"] = buffer.act[:buffer.size]
        arrays["buffer_rew"] = buffer.rew[:buffer.size]
        arrays["buffer_next_obs"] = buffer.next_obs[:buffer.size]
        arrays["buffer_done"] = buffer.done[:buffer.size]
    np.savez_compressed(directory / "trainer_state.npz", **arrays)
    with open(directory / "trainer_counters.json", "w") as f:
        json.dump(counters, f, indent=2, sort_keys=True)
        f.write("\n")


def load_trainer_state(directory, state: Td3State,
                       buffer: ReplayBuffer | None) -> dict:
    directory = Path(directory)
    with np.load(directory / "trainer_state.npz") as data:
        for name in ("actor", "critic1", "critic2"):
            opt = getattr(state, "opt_" + name)
            for l in range(len(opt.m_w)):
                opt.m_w[l][...] = data[f"{name}_mw{l}"]
                opt.v_w[l][...] = data[f"{name}_vw{l}"]
                opt.m_b[l][...] = data[f"{name}_mb{l}"]
                opt.v_b[l][...] = data[f"{name}_vb{l}"]
        if buffer is not None and "buffer_obs" in data:
            n = len(data["buffer_obs"])
            if n > buffer.capacity:
                raise ContractError("saved replay larger than buffer capacity")
            buffer.obs[:n] = data["buffer_obs"]
            buffer.act[:n] = data["buffer_act"]
            buffer.rew[:n] = data["buffer_rew"]
            buffer.next_obs[:n] = data["buffer_next_obs"]
            buffer.done[:n] = data["buffer_done"]
            buffer.size = n
            buffer._head = n % buffer.capacity
    with open(directory / "trainer_counters.json") as f:
        counters = json.load(f)
    for name in ("actor", "critic1", "critic2"):
        getattr(state, "opt_" + name).step_count = int(counters[f"{name}_opt_steps"])
    return counters


# ---------------------------------------------------------------- training

@dataclass
class EpisodeRecord:
    index: int
    worker: int
    env_steps: int
    length: int
    ret: float
    sigma: float
    max_hinge_angle: float | None = None
    params: dict | None = None


@dataclass
class TrainResult:
    state: Td3State
    episodes: list
    env_steps: int
    updates: int
    metrics_tail: dict = field(default_factory=dict)


def _episode_extras(env) -> tuple[float | None, dict | None]:
    angle = getattr(env, "episode_max_angle", None)
    params = getattr(env, "params", None)
    params_dict = None
    if params is not None:
        try:
            params_dict = asdict(params)
        except TypeError:
            params_dict = None
    return angle, params_dict


def initial_state(cfg: Td3Config, seed: int, workers: int = 1) -> Td3State:
    """The state train() builds for this seed when none is passed in.

    Callers that need a live reference during training (to snapshot from an
    episode callback) pre-create the state here and hand it to train(); the
    run is then identical to one where train() built the state itself.
    """
    init_seq = np.random.SeedSequence(seed).spawn(3 + workers)[0]
    return init_state(cfg, np.random.default_rng(init_seq))


def train(env_factory, cfg: Td3Config, seed: int = 0, workers: int = 1,
          deterministic: bool = False, state: Td3State | None = None,
          buffer: ReplayBuffer | None = None, start_step: int = 0,
          episode_cb=None, update_cb=None) -> TrainResult:
    """Run collection and learning for cfg.total_steps environment steps.

    deterministic=True forces a single worker and a strictly sequential
    step-update loop; otherwise `workers` threads collect transitions into a
    bounded queue consumed by the learner thread. episode_cb(EpisodeRecord)
    and update_cb(step, metrics) fire from the learner's thread.
    """
    cfg.validate()
    if workers < 1:
        raise ContractError("need at least one worker")
    if deterministic and workers != 1:
        raise ContractError("deterministic mode requires exactly one worker")

    root = np.random.SeedSequence(seed)
    init_seq, sample_seq, noise_seq, *worker_seqs = root.spawn(3 + workers)
    if state is None:
        state = init_state(cfg, np.random.default_rng(init_seq))
    if buffer is None:
        buffer = ReplayBuffer(cfg.buffer_capacity, cfg.obs_dim, cfg.act_dim)
    sample_rng = np.random.default_rng(sample_seq)
    noise_rng = np.random.default_rng(noise_seq)

    episodes: list[EpisodeRecord] = []
    metrics_tail: dict = {}

    if deterministic or workers == 1:
        result_steps = _train_sequential(
            env_factory, cfg, state, buffer, worker_seqs[0], sample_rng,
            noise_rng, episodes, metrics_tail, start_step, episode_cb, update_cb)
    else:
        result_steps = _train_threaded(
            env_factory, cfg, state, buffer, worker_seqs, sample_rng,
            noise_rng, workers, episodes, metrics_tail, start_step,
            episode_cb, update_cb)

    return TrainResult(state=state, episodes=episodes, env_steps=result_steps,
                       updates=state.total_updates, metrics_tail=metrics_tail)


def _train_sequential(env_factory, cfg, state, buffer, worker_seq, sample_rng,
                      noise_rng, episodes, metrics_tail, start_step,
                      episode_cb, update_cb) -> int:
    env = env_factory(0)
    explore_rng = np.random.default_rng(worker_seq)
    obs = env.reset()
    ep_ret, ep_len, ep_index = 0.0, 0, 0
    step = start_step
    while step < cfg.total_steps:
        if step < cfg.warmup_steps:
            action = explore_rng.uniform(-1.0, 1.0, cfg.act_dim)
        else:
            sigma = exploration_sigma(step, cfg)
            action = exploration_action(state.actor, obs, sigma, explore_rng)
        next_obs, reward, done, _ = env.step(action)
        buffer.add(obs, action, reward, next_obs, done)
        ep_ret += reward
        ep_len += 1
        step += 1
        obs = next_obs
        if done:
            angle, params = _episode_extras(env)
            record = EpisodeRecord(index=ep_index, worker=0, env_steps=step,
                                   length=ep_len, ret=ep_ret,
                                   sigma=exploration_sigma(step, cfg),
                                   max_hinge_angle=angle, params=params)
            episodes.append(record)
            if episode_cb:
                episode_cb(record)
            ep_index += 1
            ep_ret, ep_len = 0.0, 0
            obs = env.reset()
        if step > cfg.warmup_steps and buffer.size >= cfg.batch_size:
            metrics_tail.update(train_update(state, buffer, cfg, sample_rng, noise_rng))
            if update_cb:
                update_cb(step, metrics_tail)
    return step


def _train_threaded(env_factory, cfg, state, buffer, worker_seqs, sample_rng,
                    noise_rng, workers, episodes, metrics_tail, start_step,
                    episode_cb, update_cb) -> int:
    transitions: queue.Queue = queue.Queue(maxsize=cfg.queue_capacity)
    stop = threading.Event()
    shared = {"actor": state.actor.copy(), "step": start_step}
    record_lock = threading.Lock()
    ep_counter = [0]

    def worker_loop(wid: int, seq) -> None:
        env = env_factory(wid)
        rng = np.random.default_rng(seq)
        obs = env.reset()
        ep_ret, ep_len = 0.0, 0
        while not stop.is_set():
            step_now = shared["step"]
            if step_now < cfg.warmup_steps:
                action = rng.uniform(-1.0, 1.0, cfg.act_dim)
            else:
                action = exploration_action(shared["actor"], obs,
                                            exploration_sigma(step_now, cfg), rng)
            next_obs, reward, done, _ = env.step(action)
            item = (obs, action, reward, next_obs, done)
            while not stop.is_set():
                try:
                    transitions.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            ep_ret += reward
            ep_len += 1
            obs = next_obs
            if done:
                angle, params = _episode_extras(env)
                with record_lock:
                    record = EpisodeRecord(
                        index=ep_counter[0], worker=wid, env_steps=shared["step"],
                        length=ep_len, ret=ep_ret,
                        sigma=exploration_sigma(shared["step"], cfg),
                        max_hinge_angle=angle, params=params)
                    ep_counter[0] += 1
                    episodes.append(record)
                if episode_cb:
                    episode_cb(record)
                ep_ret, ep_len = 0.0, 0
                obs = env.reset()

    threads = [threading.Thread(target=worker_loop, args=(wid, seq), daemon=True)
               for wid, seq in enumerate(worker_seqs)]
    for t in threads:
        t.start()

    step = start_step
    try:
        while step < cfg.total_steps:
            try:
                obs, action, reward, next_obs, done = transitions.get(timeout=1.0)
            except queue.Empty:
                if not any(t.is_alive() for t in threads):
                    raise ContractError("all collection workers exited early")
                continue
            buffer.add(obs, action, reward, next_obs, done)
            step += 1
            shared["step"] = step
            if step > cfg.warmup_steps and buffer.size >= cfg.batch_size:
                metrics_tail.update(train_update(state, buffer, cfg,
                                                 sample_rng, noise_rng))
                if update_cb:
                    update_cb(step, metrics_tail)
                if state.total_updates % cfg.publish_every == 0:
                    shared["actor"] = state.actor.copy()
    finally:
        stop.set()
        for t in threads:
            t.join(timeout=5.0)
    return step
