"""Game definitions, trajectories, costates and cost parameters.

Time indexing: a game over horizon T has states x_0..x_{T-1}, controls and
costates over stages 0..T-2. The initial state is always data, never a
decision variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import DynamicsModel


@dataclass(frozen=True)
class GameDefinition:
    """Immutable description of an N-player open-loop dynamic game.

    bases[i] is the tuple of basis functions whose nonnegative combination
    forms player i's stage cost; param_floor is the lower bound used when
    estimating those weights. position_indices gives each player's (p_x, p_y)
    coordinates inside the stacked state; heading/speed indices are set for
    unicycle-style layouts and enable the partial observation model.
    """

    num_players: int
    horizon: int
    state_dim: int
    control_dims: tuple
    dt: float
    dynamics: DynamicsModel
    bases: tuple
    position_indices: tuple
    heading_indices: Optional[tuple] = None
    speed_indices: Optional[tuple] = None
    param_floor: float = 0.01
    label: str = ""

    def __post_init__(self):
        if self.num_players < 1:
            raise ValueError("num_players must be >= 1")
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.dynamics.state_dim != self.state_dim:
            raise ValueError("dynamics state_dim mismatch")
        if tuple(self.dynamics.control_dims) != tuple(self.control_dims):
            raise ValueError("dynamics control_dims mismatch")
        if len(self.bases) != self.num_players:
            raise ValueError("need one basis tuple per player")
        for i, bs in enumerate(self.bases):
            if len(bs) == 0:
                raise ValueError(f"player {i} has no basis functions")
        if len(self.position_indices) != self.num_players:
            raise ValueError("need position indices per player")
        if self.param_floor < 0:
            raise ValueError("param_floor must be nonnegative")
        total = sum(len(bs) for bs in self.bases)
        if self.param_floor * total > 1.0 + 1e-12:
            raise ValueError("param_floor too large for a unit-sum weighting")

    @property
    def basis_counts(self):
        return tuple(len(bs) for bs in self.bases)

    def num_primal_variables(self, include_theta=False):
        T = self.horizon
        n = T * self.state_dim + (T - 1) * sum(self.control_dims)
        n += self.num_players * (T - 1) * self.state_dim
        if include_theta:
            n += sum(self.basis_counts)
        return n


@dataclass
class Trajectory:
    """states: (T, n); controls: one (T-1, m_i) array per player."""

    states: np.ndarray
    controls: list

    @classmethod
    def zeros(cls, game):
        return cls(np.zeros((game.horizon, game.state_dim)),
                   [np.zeros((game.horizon - 1, m)) for m in game.control_dims])

    def copy(self):
        return Trajectory(self.states.copy(), [u.copy() for u in self.controls])

    def controls_at(self, t):
        return [u[t] for u in self.controls]

    def validate(self, game):
        if self.states.shape != (game.horizon, game.state_dim):
            raise ValueError("state array shape mismatch")
        if len(self.controls) != game.num_players:
            raise ValueError("need one control array per player")
        for i, (u, m) in enumerate(zip(self.controls, game.control_dims)):
            if u.shape != (game.horizon - 1, m):
                raise ValueError(f"control array shape mismatch for player {i}")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("non-finite state entries")
        for u in self.controls:
            if not np.all(np.isfinite(u)):
                raise ValueError("non-finite control entries")
        return self


@dataclass
class Costates:
    """One (T-1, n) multiplier array per player, lams[i][t] paired with the
    dynamics row x_{t+1} - f_t = 0."""

    lams: list

    @classmethod
    def zeros(cls, game):
        return cls([np.zeros((game.horizon - 1, game.state_dim))
                    for _ in range(game.num_players)])

    def copy(self):
        return Costates([l.copy() for l in self.lams])

    def validate(self, game):
        if len(self.lams) != game.num_players:
            raise ValueError("need one costate array per player")
        for lam in self.lams:
            if lam.shape != (game.horizon - 1, game.state_dim):
                raise ValueError("costate array shape mismatch")
            if not np.all(np.isfinite(lam)):
                raise ValueError("non-finite costate entries")
        return self


@dataclass
class CostParameters:
    """Per-player basis weights."""

    weights: list

    @classmethod
    def uniform(cls, game):
        total = sum(game.basis_counts)
        return cls([np.full(k, 1.0 / total) for k in game.basis_counts])

    @classmethod
    def from_stacked(cls, game, vec):
        vec = np.asarray(vec, dtype=float)
        out = []
        off = 0
        for k in game.basis_counts:
            out.append(vec[off:off + k].copy())
            off += k
        if off != len(vec):
            raise ValueError("stacked weight length mismatch")
        return cls(out)

    def stacked(self):
        return np.concatenate(self.weights)

    def copy(self):
        return CostParameters([w.copy() for w in self.weights])

    def scale(self, s):
        return CostParameters([s * w for w in self.weights])

    def validate_normalized(self, floor, atol=1e-10):
        s = sum(float(np.sum(w)) for w in self.weights)
        if abs(s - 1.0) > atol:
            raise ValueError(f"weights sum to {s}, expected 1")
        for w in self.weights:
            if np.any(w < floor - 1e-9):
                raise ValueError("weight below floor")
        return self


def rollout(game, x1, controls):
    """Integrate the dynamics from x1 under the given control sequences."""
    x1 = np.asarray(x1, dtype=float)
    if x1.shape != (game.state_dim,):
        raise ValueError("initial state dimension mismatch")
    T = game.horizon
    states = np.zeros((T, game.state_dim))
    states[0] = x1
    for t in range(T - 1):
        u_t = [u[t] for u in controls]
        states[t + 1] = game.dynamics.step(t, states[t], u_t)
        if not np.all(np.isfinite(states[t + 1])):
            raise ValueError(f"non-finite state at step {t + 1}")
    return Trajectory(states, [np.asarray(u, dtype=float).copy()
                               for u in controls])


def truncate_game(game, horizon):
    """Shorten the horizon; horizon-anchored cost gates re-anchor to the new
    final step (the truncated game terminates there)."""
    if not (2 <= horizon <= game.horizon):
        raise ValueError("truncated horizon out of range")
    bases = tuple(tuple(b.with_horizon(horizon) for b in bs)
                  for bs in game.bases)
    return GameDefinition(
        num_players=game.num_players, horizon=int(horizon),
        state_dim=game.state_dim, control_dims=game.control_dims,
        dt=game.dt, dynamics=game.dynamics, bases=bases,
        position_indices=game.position_indices,
        heading_indices=game.heading_indices,
        speed_indices=game.speed_indices,
        param_floor=game.param_floor, label=game.label)


def window_game(game, start, length):
    """Restrict to stages [start, start+length) of the original timeline.

    Stage costs keep their global time reference (gates fire at the original
    steps), which is what a sliding estimation window needs.
    """
    if start < 0 or start + length > game.horizon:
        raise ValueError("window outside the game horizon")
    if length < 2:
        raise ValueError("window must span at least two steps")
    bases = tuple(tuple(b.shift_time(start) for b in bs) for bs in game.bases)
    return GameDefinition(
        num_players=game.num_players, horizon=int(length),
        state_dim=game.state_dim, control_dims=game.control_dims,
        dt=game.dt, dynamics=game.dynamics, bases=bases,
        position_indices=game.position_indices,
        heading_indices=game.heading_indices,
        speed_indices=game.speed_indices,
        param_floor=game.param_floor, label=game.label)
