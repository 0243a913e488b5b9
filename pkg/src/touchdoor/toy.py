"""A one-dimensional reach task for exercising the learner.

State is a position on [-1, 1] and a fixed goal; the action nudges the
position by up to 0.1 per step. Reward is the negative distance to the goal
and the episode ends inside the 0.1-wide goal region. Any competent learner
solves this in a few thousand steps, which makes it the standard smoke test
for the whole TD3 stack without any door physics in the loop.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

STEP_SCALE = 0.1
GOAL_RADIUS = 0.1


class ToyReachEnv:
    obs_dim = 2
    act_dim = 1
    max_steps = 50

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(np.random.SeedSequence(seed))
        self._done = True

    def reset(self) -> np.ndarray:
        self.position = float(self._rng.uniform(-1.0, 1.0))
        self.goal = float(self._rng.uniform(-0.9, 0.9))
        self._steps = 0
        self._done = False
        self.reached = False
        return np.array([self.position, self.goal])

    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        if self._done:
            raise ContractError("step after episode end; call reset first")
        a = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -1.0, 1.0))
        self.position = float(np.clip(self.position + STEP_SCALE * a, -1.0, 1.0))
        self._steps += 1
        distance = abs(self.position - self.goal)
        self.reached = distance <= GOAL_RADIUS
        self._done = self.reached or self._steps >= self.max_steps
        return np.array([self.position, self.goal]), -distance, self._done, {}


def evaluate_policy(actor_forward, n_episodes: int = 50, seed: int = 1000) -> float:
    """Fraction of episodes where a deterministic policy reaches the goal."""
    reached = 0
    for k in range(n_episodes):
        env = ToyReachEnv(seed=seed + k)
        obs = env.reset()
        done = False
        while not done:
            obs, _, done, _ = env.step(actor_forward(obs))
        reached += int(env.reached)
    return reached / n_episodes
