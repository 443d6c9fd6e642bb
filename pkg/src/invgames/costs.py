"""Stage-cost basis functions.

Each player's stage cost is a nonnegative combination of basis functions,
J^i = sum_t theta^i . g^i_t(x_t, u_t). State-only bases contribute at every
stage t = 0..T-1; bases that touch controls contribute only at t = 0..T-2
(there is no control at the final stage). Assembly code enforces that split,
so `value`/gradients may assume `controls` is valid whenever they are called
with `uses_controls = True`.

Derivative conventions (n = state dim, m_j = player j control dim):
    grad_x  -> (n,)
    grad_u  -> (m_player,)
    hess_xx -> (n, n), symmetric
    hess_ux -> (m_player, n), d2 g / du^player dx
    hess_uu -> (m_a, m_b)
"""

from __future__ import annotations

import numpy as np


class BasisFunction:
    """Base class; second derivatives default to forward differences of the
    analytic gradients (h = 1e-6). Built-ins override them analytically."""

    uses_controls = False

    def value(self, t, x, controls):
        raise NotImplementedError

    def grad_x(self, t, x, controls):
        return np.zeros(len(x))

    def grad_u(self, t, x, controls, player):
        return np.zeros(len(controls[player]))

    def hess_xx(self, t, x, controls, h=1e-6):
        n = len(x)
        H = np.zeros((n, n))
        g0 = self.grad_x(t, x, controls)
        for k in range(n):
            xp = np.array(x, dtype=float)
            xp[k] += h
            H[:, k] = (self.grad_x(t, xp, controls) - g0) / h
        return 0.5 * (H + H.T)

    def hess_ux(self, t, x, controls, player, h=1e-6):
        m = len(controls[player])
        n = len(x)
        H = np.zeros((m, n))
        g0 = self.grad_u(t, x, controls, player)
        for k in range(n):
            xp = np.array(x, dtype=float)
            xp[k] += h
            H[:, k] = (self.grad_u(t, xp, controls, player) - g0) / h
        return H

    def hess_uu(self, t, x, controls, player_a, player_b, h=1e-6):
        ma = len(controls[player_a])
        mb = len(controls[player_b])
        H = np.zeros((ma, mb))
        g0 = self.grad_u(t, x, controls, player_a)
        for k in range(mb):
            up = [np.array(u, dtype=float) for u in controls]
            up[player_b][k] += h
            H[:, k] = (self.grad_u(t, x, up, player_a) - g0) / h
        if player_a == player_b:
            H = 0.5 * (H + H.T)
        return H

    # horizon hooks used by game truncation / windowing; default: no
    # horizon dependence
    def with_horizon(self, horizon):
        return self

    def shift_time(self, offset):
        if offset == 0:
            return self
        return TimeShiftedBasis(self, offset)


class TimeShiftedBasis(BasisFunction):
    """Evaluates a basis at a shifted stage index (window games)."""

    def __init__(self, base, offset):
        self.base = base
        self.offset = int(offset)
        self.uses_controls = base.uses_controls

    def value(self, t, x, controls):
        return self.base.value(t + self.offset, x, controls)

    def grad_x(self, t, x, controls):
        return self.base.grad_x(t + self.offset, x, controls)

    def grad_u(self, t, x, controls, player):
        return self.base.grad_u(t + self.offset, x, controls, player)

    def hess_xx(self, t, x, controls):
        return self.base.hess_xx(t + self.offset, x, controls)

    def hess_ux(self, t, x, controls, player):
        return self.base.hess_ux(t + self.offset, x, controls, player)

    def hess_uu(self, t, x, controls, player_a, player_b):
        return self.base.hess_uu(t + self.offset, x, controls, player_a, player_b)

    def shift_time(self, offset):
        return TimeShiftedBasis(self.base, self.offset + offset)


class QuadraticStateBasis(BasisFunction):
    """0.5 x' Q x with Q symmetric PSD."""

    def __init__(self, Q):
        Q = np.asarray(Q, dtype=float)
        self.Q = 0.5 * (Q + Q.T)

    def value(self, t, x, controls):
        return 0.5 * float(x @ self.Q @ x)

    def grad_x(self, t, x, controls):
        return self.Q @ x

    def hess_xx(self, t, x, controls):
        return self.Q

    def hess_ux(self, t, x, controls, player):
        return np.zeros((len(controls[player]), len(x)))

    def hess_uu(self, t, x, controls, player_a, player_b):
        return np.zeros((len(controls[player_a]), len(controls[player_b])))


class QuadraticControlBasis(BasisFunction):
    """0.5 u^j' R u^j on a designated player's control."""

    uses_controls = True

    def __init__(self, acts_on, R):
        R = np.asarray(R, dtype=float)
        self.acts_on = int(acts_on)
        self.R = 0.5 * (R + R.T)

    def value(self, t, x, controls):
        u = controls[self.acts_on]
        return 0.5 * float(u @ self.R @ u)

    def grad_u(self, t, x, controls, player):
        if player == self.acts_on:
            return self.R @ controls[player]
        return np.zeros(len(controls[player]))

    def hess_xx(self, t, x, controls):
        return np.zeros((len(x), len(x)))

    def hess_ux(self, t, x, controls, player):
        return np.zeros((len(controls[player]), len(x)))

    def hess_uu(self, t, x, controls, player_a, player_b):
        if player_a == self.acts_on and player_b == self.acts_on:
            return self.R
        return np.zeros((len(controls[player_a]), len(controls[player_b])))


def gate_active(t, horizon, t_goal):
    """Time gate: stage t (0-based) counts as paper-time t+1; active on the
    last t_goal+1 paper steps, i.e. t+1 >= horizon - t_goal."""
    return (t + 1) >= (horizon - t_goal)


class GoalDistanceBasis(BasisFunction):
    """Gated squared distance of a player's position to a fixed goal point."""

    def __init__(self, pos_idx, goal, horizon, t_goal):
        self.pos_idx = tuple(int(k) for k in pos_idx)
        self.goal = np.asarray(goal, dtype=float)
        self.horizon = int(horizon)
        self.t_goal = int(t_goal)
        if not (1 <= self.t_goal <= self.horizon):
            raise ValueError("t_goal must lie in [1, horizon]")

    def _active(self, t):
        return gate_active(t, self.horizon, self.t_goal)

    def value(self, t, x, controls):
        if not self._active(t):
            return 0.0
        d = x[list(self.pos_idx)] - self.goal
        return float(d @ d)

    def grad_x(self, t, x, controls):
        g = np.zeros(len(x))
        if self._active(t):
            d = x[list(self.pos_idx)] - self.goal
            g[list(self.pos_idx)] = 2.0 * d
        return g

    def hess_xx(self, t, x, controls):
        H = np.zeros((len(x), len(x)))
        if self._active(t):
            for k in self.pos_idx:
                H[k, k] = 2.0
        return H

    def hess_ux(self, t, x, controls, player):
        return np.zeros((len(controls[player]), len(x)))

    def hess_uu(self, t, x, controls, player_a, player_b):
        return np.zeros((len(controls[player_a]), len(controls[player_b])))

    def with_horizon(self, horizon):
        t_goal = min(self.t_goal, int(horizon))
        return GoalDistanceBasis(self.pos_idx, self.goal, horizon, t_goal)


class StateDeviationBasis(BasisFunction):
    """Gated weighted squared deviation of selected state coordinates from a
    target, e.g. lane and speed preferences."""

    def __init__(self, idx, target, weights, horizon, t_goal):
        self.idx = tuple(int(k) for k in idx)
        self.target = np.asarray(target, dtype=float)
        self.w = np.asarray(weights, dtype=float)
        if len(self.idx) != len(self.target) or len(self.idx) != len(self.w):
            raise ValueError("idx, target and weights must have equal length")
        self.horizon = int(horizon)
        self.t_goal = int(t_goal)
        if not (1 <= self.t_goal <= self.horizon):
            raise ValueError("t_goal must lie in [1, horizon]")

    def _active(self, t):
        return gate_active(t, self.horizon, self.t_goal)

    def value(self, t, x, controls):
        if not self._active(t):
            return 0.0
        d = x[list(self.idx)] - self.target
        return float(self.w @ (d * d))

    def grad_x(self, t, x, controls):
        g = np.zeros(len(x))
        if self._active(t):
            d = x[list(self.idx)] - self.target
            g[list(self.idx)] = 2.0 * self.w * d
        return g

    def hess_xx(self, t, x, controls):
        H = np.zeros((len(x), len(x)))
        if self._active(t):
            for k, wk in zip(self.idx, self.w):
                H[k, k] = 2.0 * wk
        return H

    def hess_ux(self, t, x, controls, player):
        return np.zeros((len(controls[player]), len(x)))

    def hess_uu(self, t, x, controls, player_a, player_b):
        return np.zeros((len(controls[player_a]), len(controls[player_b])))

    def with_horizon(self, horizon):
        t_goal = min(self.t_goal, int(horizon))
        return StateDeviationBasis(self.idx, self.target, self.w, horizon,
                                   t_goal)


class ProximityBasis(BasisFunction):
    """-sum_{j != i} log ||p_i - p_j||^2, squared distance floored at `guard`.

    Inside the guard region the value is the constant -log(guard) and all
    derivatives vanish.
    """

    def __init__(self, player, position_indices, guard=1e-6):
        self.player = int(player)
        self.position_indices = tuple(tuple(int(k) for k in idx)
                                      for idx in position_indices)
        if len(self.position_indices) < 2:
            raise ValueError("proximity needs at least two players")
        self.guard = float(guard)

    def _pairs(self, x):
        pi = x[list(self.position_indices[self.player])]
        for j, idx in enumerate(self.position_indices):
            if j == self.player:
                continue
            yield j, pi - x[list(idx)]

    def value(self, t, x, controls):
        total = 0.0
        for _, d in self._pairs(x):
            total -= np.log(max(float(d @ d), self.guard))
        return total

    def grad_x(self, t, x, controls):
        g = np.zeros(len(x))
        own = list(self.position_indices[self.player])
        for j, d in self._pairs(x):
            r2 = float(d @ d)
            if r2 <= self.guard:
                continue
            gi = -2.0 * d / r2
            g[own] += gi
            g[list(self.position_indices[j])] -= gi
        return g

    def hess_xx(self, t, x, controls):
        n = len(x)
        H = np.zeros((n, n))
        own = list(self.position_indices[self.player])
        for j, d in self._pairs(x):
            r2 = float(d @ d)
            if r2 <= self.guard:
                continue
            # d^2/dd^2 of -log(d'd)
            Hd = -2.0 * np.eye(len(d)) / r2 + 4.0 * np.outer(d, d) / r2 ** 2
            other = list(self.position_indices[j])
            H[np.ix_(own, own)] += Hd
            H[np.ix_(other, other)] += Hd
            H[np.ix_(own, other)] -= Hd
            H[np.ix_(other, own)] -= Hd
        return H

    def hess_ux(self, t, x, controls, player):
        return np.zeros((len(controls[player]), len(x)))

    def hess_uu(self, t, x, controls, player_a, player_b):
        return np.zeros((len(controls[player_a]), len(controls[player_b])))


class SpeedBasis(BasisFunction):
    """v^2 on a single state coordinate."""

    def __init__(self, v_idx):
        self.v_idx = int(v_idx)

    def value(self, t, x, controls):
        return float(x[self.v_idx] ** 2)

    def grad_x(self, t, x, controls):
        g = np.zeros(len(x))
        g[self.v_idx] = 2.0 * x[self.v_idx]
        return g

    def hess_xx(self, t, x, controls):
        H = np.zeros((len(x), len(x)))
        H[self.v_idx, self.v_idx] = 2.0
        return H

    def hess_ux(self, t, x, controls, player):
        return np.zeros((len(controls[player]), len(x)))

    def hess_uu(self, t, x, controls, player_a, player_b):
        return np.zeros((len(controls[player_a]), len(controls[player_b])))


class ControlEffortBasis(BasisFunction):
    """Squared single control component, e.g. yaw rate or acceleration."""

    uses_controls = True

    def __init__(self, player, component):
        self.player = int(player)
        self.component = int(component)

    def value(self, t, x, controls):
        return float(controls[self.player][self.component] ** 2)

    def grad_u(self, t, x, controls, player):
        g = np.zeros(len(controls[player]))
        if player == self.player:
            g[self.component] = 2.0 * controls[player][self.component]
        return g

    def hess_xx(self, t, x, controls):
        return np.zeros((len(x), len(x)))

    def hess_ux(self, t, x, controls, player):
        return np.zeros((len(controls[player]), len(x)))

    def hess_uu(self, t, x, controls, player_a, player_b):
        H = np.zeros((len(controls[player_a]), len(controls[player_b])))
        if player_a == self.player and player_b == self.player:
            H[self.component, self.component] = 2.0
        return H


def total_cost(game, params, trajectory, player):
    """J^player = sum_t theta . g(t); control bases stop one step early."""
    theta = params.weights[player]
    bases = game.bases[player]
    total = 0.0
    T = game.horizon
    for t in range(T - 1):
        controls_t = [u[t] for u in trajectory.controls]
        for w, b in zip(theta, bases):
            total += w * b.value(t, trajectory.states[t], controls_t)
    for w, b in zip(theta, bases):
        if not b.uses_controls:
            total += w * b.value(T - 1, trajectory.states[T - 1], None)
    return total


def stage_gradients(game, params, player, t, x, controls):
    """theta-weighted (grad_x, grad_u^player) of player's stage cost at t.

    At the terminal stage (t = horizon-1) only state bases contribute and the
    control gradient is zero-sized by convention.
    """
    theta = params.weights[player]
    bases = game.bases[player]
    n = game.state_dim
    gx = np.zeros(n)
    terminal = (t == game.horizon - 1)
    gu = np.zeros(game.control_dims[player])
    for w, b in zip(theta, bases):
        if terminal:
            if not b.uses_controls:
                gx += w * b.grad_x(t, x, None)
        else:
            gx += w * b.grad_x(t, x, controls)
            if b.uses_controls:
                gu += w * b.grad_u(t, x, controls, player)
    return gx, gu
