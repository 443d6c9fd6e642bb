"""Linear observation models and additive white Gaussian noise sampling.

Observations are y_t = H x_t + noise for the first T_obs states of a
trajectory. `full` observes every state coordinate; `partial` observes each
player's position and heading (unicycle-style layouts only). sigma = 0 means
exact measurements; the likelihood then uses unit weights, which has the same
minimizers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class ObservationModel:
    kind: str
    matrix: np.ndarray  # (obs_dim, state_dim)
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.matrix.ndim != 2:
            raise ValueError("observation matrix must be 2-D")

    @property
    def obs_dim(self):
        return self.matrix.shape[0]

    def h(self, t, x):
        return self.matrix @ x

    def weights(self):
        """Inverse noise variances on the residual coordinates."""
        if self.sigma == 0.0:
            return np.ones(self.obs_dim)
        return np.full(self.obs_dim, 1.0 / self.sigma ** 2)


def full_observation_model(game, sigma):
    return ObservationModel("full", np.eye(game.state_dim), float(sigma))


def partial_observation_model(game, sigma):
    """Positions and headings per player; speeds are hidden."""
    if game.heading_indices is None:
        raise ValueError("partial observations need a unicycle state layout")
    rows = []
    for i in range(game.num_players):
        rows.extend(game.position_indices[i])
        rows.append(game.heading_indices[i])
    H = np.zeros((len(rows), game.state_dim))
    for r, c in enumerate(rows):
        H[r, c] = 1.0
    return ObservationModel("partial", H, float(sigma))


def observation_model(game, kind, sigma):
    if kind == "full":
        return full_observation_model(game, sigma)
    if kind == "partial":
        return partial_observation_model(game, sigma)
    raise ValueError(f"unknown observation kind '{kind}'")


@dataclass
class ObservationSequence:
    """values[k] observes the state at global stage start + k (0-based)."""

    values: np.ndarray
    sigma: float
    kind: str
    start: int = 0

    def __len__(self):
        return self.values.shape[0]

    @property
    def last_stage(self):
        return self.start + len(self) - 1

    def window(self, start, stop):
        """Sub-sequence observing global stages [start, stop)."""
        if start < self.start or stop > self.start + len(self):
            raise ValueError("window outside the observed range")
        lo = start - self.start
        return ObservationSequence(self.values[lo:stop - self.start].copy(),
                                   self.sigma, self.kind, start)


def sample_awgn(trajectory, model, seed, num_steps=None, sigma=None):
    """Observe the first num_steps states under the model with fresh AWGN.

    `seed` may be an integer, a SeedSequence or a Generator; sampling is
    deterministic given the seed. sigma overrides the model's level when
    given (the sequence records the level actually used).
    """
    rng = np.random.default_rng(seed)
    level = model.sigma if sigma is None else float(sigma)
    T = trajectory.states.shape[0]
    steps = T if num_steps is None else int(num_steps)
    if not (1 <= steps <= T):
        raise ValueError("num_steps outside the trajectory horizon")
    clean = np.array([model.h(t, trajectory.states[t]) for t in range(steps)])
    if level > 0:
        clean = clean + level * rng.standard_normal(clean.shape)
    return ObservationSequence(clean, level, model.kind, 0)


def negative_log_likelihood(observations, trajectory, model):
    """sum_t (y_t - H x_t)' Sigma^{-1} (y_t - H x_t) over the observed steps."""
    w = model.weights()
    total = 0.0
    for k in range(len(observations)):
        t = observations.start + k
        r = observations.values[k] - model.h(t, trajectory.states[t])
        total += float(r @ (w * r))
    return total
