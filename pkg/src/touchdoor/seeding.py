"""Deterministic random-stream derivation.

Every stochastic component (weight init, exploration, smoothing noise, replay
sampling, dynamics sampling, observation noise, delay bits, bit flips, reset
jitter) gets its own numpy Generator derived from one root seed, so runs are
reproducible and adding a consumer never shifts the draws of another.
"""

from __future__ import annotations

import numpy as np


def split_streams(seed: int, names: tuple[str, ...]) -> dict[str, np.random.Generator]:
    """One independent Generator per name, in the order given.

    The split is positional: the contract is the tuple of names passed here,
    documented at each call site.
    """
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def spawn_seed_sequences(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Child SeedSequences for n workers (worker k gets child k)."""
    return np.random.SeedSequence(seed).spawn(n)
