"""Stacked first-order optimality system for open-loop Nash equilibria.

For each player i the stationarity residuals are

    state rows, t = 1..T-2 :  gx_i(t) + lam_i[t-1] - Jx(t)' lam_i[t]
    state row,  t = T-1    :  gx_i(T-1) + lam_i[T-2]
    control rows, t = 0..T-2: gu_i(t) - Ju_i(t)' lam_i[t]

followed by the shared dynamics defect rows x_{t+1} - f_t(x_t, u_t). There is
no stationarity row for x_0 (the initial state is data), which makes the
system square in (x_1.., u, lam) for the forward problem and underdetermined
by exactly the parameter dimensions for the inverse one.

Residual rows are ordered player-major ([state rows; control rows] per
player), dynamics rows last. The flat variable vector is
(x, u^1..u^N, lam^1..lam^N[, theta^1..theta^N]), time-major inside each block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .costs import stage_gradients
from .games import Costates, CostParameters, Trajectory

# the package's sparse matrices are plain scipy CSR
SparseJacobian = sp.csr_matrix


@dataclass(frozen=True)
class VariableLayout:
    """Offsets of the flat decision vector for a given game.

    include_costates/include_theta select the (x, u) smoothing layout, the
    square forward layout, or the full inverse layout.
    """

    horizon: int
    state_dim: int
    control_dims: tuple
    basis_counts: tuple
    include_costates: bool = True
    include_theta: bool = False

    @classmethod
    def for_game(cls, game, include_costates=True, include_theta=False):
        return cls(game.horizon, game.state_dim, tuple(game.control_dims),
                   tuple(game.basis_counts), include_costates, include_theta)

    @property
    def num_players(self):
        return len(self.control_dims)

    @property
    def x_size(self):
        return self.horizon * self.state_dim

    @property
    def u_offset(self):
        return self.x_size

    def u_player_offset(self, i):
        return self.u_offset + (self.horizon - 1) * sum(self.control_dims[:i])

    @property
    def lam_offset(self):
        return self.u_offset + (self.horizon - 1) * sum(self.control_dims)

    def lam_player_offset(self, i):
        if not self.include_costates:
            raise ValueError("layout has no costate block")
        return self.lam_offset + i * (self.horizon - 1) * self.state_dim

    @property
    def theta_offset(self):
        off = self.lam_offset
        if self.include_costates:
            off += self.num_players * (self.horizon - 1) * self.state_dim
        return off

    def theta_player_offset(self, i):
        if not self.include_theta:
            raise ValueError("layout has no parameter block")
        return self.theta_offset + sum(self.basis_counts[:i])

    @property
    def dim(self):
        off = self.theta_offset
        if self.include_theta:
            off += sum(self.basis_counts)
        return off

    # slices -------------------------------------------------------------
    def x_slice(self, t):
        n = self.state_dim
        return slice(t * n, (t + 1) * n)

    def u_slice(self, i, t):
        m = self.control_dims[i]
        off = self.u_player_offset(i) + t * m
        return slice(off, off + m)

    def lam_slice(self, i, t):
        n = self.state_dim
        off = self.lam_player_offset(i) + t * n
        return slice(off, off + n)

    def theta_slice(self, i):
        off = self.theta_player_offset(i)
        return slice(off, off + self.basis_counts[i])

    def theta_indices(self):
        if not self.include_theta:
            return np.array([], dtype=int)
        return np.arange(self.theta_offset, self.dim)

    # pack/unpack ----------------------------------------------------------
    def pack(self, trajectory, costates=None, params=None):
        z = np.zeros(self.dim)
        z[:self.x_size] = trajectory.states.reshape(-1)
        for i in range(self.num_players):
            off = self.u_player_offset(i)
            size = (self.horizon - 1) * self.control_dims[i]
            z[off:off + size] = trajectory.controls[i].reshape(-1)
        if self.include_costates:
            if costates is None:
                raise ValueError("layout expects costates")
            for i in range(self.num_players):
                off = self.lam_player_offset(i)
                size = (self.horizon - 1) * self.state_dim
                z[off:off + size] = costates.lams[i].reshape(-1)
        if self.include_theta:
            if params is None:
                raise ValueError("layout expects parameters")
            off = self.theta_offset
            stacked = params.stacked()
            z[off:off + len(stacked)] = stacked
        return z

    def unpack(self, z):
        T, n = self.horizon, self.state_dim
        states = z[:self.x_size].reshape(T, n).copy()
        controls = []
        for i in range(self.num_players):
            off = self.u_player_offset(i)
            size = (T - 1) * self.control_dims[i]
            controls.append(z[off:off + size].reshape(T - 1,
                                                      self.control_dims[i]).copy())
        traj = Trajectory(states, controls)
        costates = None
        if self.include_costates:
            lams = []
            for i in range(self.num_players):
                off = self.lam_player_offset(i)
                size = (T - 1) * n
                lams.append(z[off:off + size].reshape(T - 1, n).copy())
            costates = Costates(lams)
        params = None
        if self.include_theta:
            off = self.theta_offset
            weights = []
            for k in self.basis_counts:
                weights.append(z[off:off + k].copy())
                off += k
            params = CostParameters(weights)
        return traj, costates, params


@dataclass(frozen=True)
class ResidualLayout:
    """Row offsets of the stacked residual: per player [state; control]
    stationarity rows, then dynamics rows."""

    horizon: int
    state_dim: int
    control_dims: tuple

    @property
    def num_players(self):
        return len(self.control_dims)

    def player_offset(self, i):
        T, n = self.horizon, self.state_dim
        return sum((T - 1) * (n + m) for m in self.control_dims[:i])

    def x_stat_row(self, i, t):
        # t = 1..T-1 indexes the state the row differentiates against
        return self.player_offset(i) + (t - 1) * self.state_dim

    def u_stat_row(self, i, t):
        T, n = self.horizon, self.state_dim
        return self.player_offset(i) + (T - 1) * n + t * self.control_dims[i]

    @property
    def dynamics_offset(self):
        T, n = self.horizon, self.state_dim
        return sum((T - 1) * (n + m) for m in self.control_dims)

    def dynamics_row(self, t):
        return self.dynamics_offset + t * self.state_dim

    @property
    def dim(self):
        T, n = self.horizon, self.state_dim
        return self.dynamics_offset + (T - 1) * n


@dataclass
class KktResidual:
    """Stacked residual with block accessors."""

    vector: np.ndarray
    layout: ResidualLayout

    @property
    def inf_norm(self):
        return float(np.max(np.abs(self.vector))) if len(self.vector) else 0.0

    @property
    def two_norm(self):
        return float(np.linalg.norm(self.vector))

    def x_stationarity(self, i):
        T, n = self.layout.horizon, self.layout.state_dim
        off = self.layout.player_offset(i)
        return self.vector[off:off + (T - 1) * n]

    def u_stationarity(self, i):
        T, n = self.layout.horizon, self.layout.state_dim
        m = self.layout.control_dims[i]
        off = self.layout.player_offset(i) + (T - 1) * n
        return self.vector[off:off + (T - 1) * m]

    def dynamics(self):
        return self.vector[self.layout.dynamics_offset:]


def assemble_F(game, trajectory):
    """Dynamics defect rows x_{t+1} - f_t(x_t, u_t), stacked over t."""
    T, n = game.horizon, game.state_dim
    out = np.zeros((T - 1) * n)
    x = trajectory.states
    for t in range(T - 1):
        u_t = trajectory.controls_at(t)
        out[t * n:(t + 1) * n] = x[t + 1] - game.dynamics.step(t, x[t], u_t)
    return out


def assemble_G(game, trajectory, costates, params):
    """Full stacked first-order system; theta need not be normalized."""
    T, n = game.horizon, game.state_dim
    rows = ResidualLayout(T, n, tuple(game.control_dims))
    vec = np.zeros(rows.dim)
    x = trajectory.states
    dyn = game.dynamics

    jac_x = [dyn.jac_x(t, x[t], trajectory.controls_at(t))
             for t in range(T - 1)]
    jac_u = [[dyn.jac_u(t, x[t], trajectory.controls_at(t), i)
              for i in range(game.num_players)] for t in range(T - 1)]

    for i in range(game.num_players):
        lam = costates.lams[i]
        for t in range(1, T):
            gx, _ = stage_gradients(game, params, i, t, x[t],
                                    trajectory.controls_at(t) if t < T - 1
                                    else None)
            r = gx + lam[t - 1]
            if t < T - 1:
                r = r - jac_x[t].T @ lam[t]
            off = rows.x_stat_row(i, t)
            vec[off:off + n] = r
        for t in range(T - 1):
            _, gu = stage_gradients(game, params, i, t, x[t],
                                    trajectory.controls_at(t))
            r = gu - jac_u[t][i].T @ lam[t]
            off = rows.u_stat_row(i, t)
            vec[off:off + game.control_dims[i]] = r

    vec[rows.dynamics_offset:] = assemble_F(game, trajectory)
    return KktResidual(vec, rows)


class _TripletSink:
    def __init__(self):
        self.rows = []
        self.cols = []
        self.vals = []

    def add(self, r0, c0, block):
        block = np.asarray(block)
        nz = np.nonzero(block)
        if len(nz[0]) == 0:
            return
        self.rows.append(r0 + nz[0])
        self.cols.append(c0 + nz[1])
        self.vals.append(block[nz])

    def matrix(self, shape):
        if not self.rows:
            return sp.csr_matrix(shape)
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


def jacobian_G(game, trajectory, costates, params, include_theta=False):
    """Exact sparse Jacobian of assemble_G with respect to the flat vector
    (x, u, lam[, theta])."""
    T, n = game.horizon, game.state_dim
    N = game.num_players
    cols = VariableLayout.for_game(game, include_theta=include_theta)
    rows = ResidualLayout(T, n, tuple(game.control_dims))
    sink = _TripletSink()
    x = trajectory.states
    dyn = game.dynamics
    m_total = sum(game.control_dims)
    u_block_off = np.cumsum([0] + list(game.control_dims))

    jac_x = [dyn.jac_x(t, x[t], trajectory.controls_at(t))
             for t in range(T - 1)]
    jac_u = [[dyn.jac_u(t, x[t], trajectory.controls_at(t), i)
              for i in range(N)] for t in range(T - 1)]

    eye_n = np.eye(n)

    def cost_hessians(i, t, terminal):
        theta = params.weights[i]
        bases = game.bases[i]
        controls_t = None if terminal else trajectory.controls_at(t)
        m_i = game.control_dims[i]
        Hxx = np.zeros((n, n))
        Hux = np.zeros((m_i, n))
        Huu = [np.zeros((m_i, game.control_dims[j])) for j in range(N)]
        Hxu = [np.zeros((n, game.control_dims[j])) for j in range(N)]
        for w, b in zip(theta, bases):
            if terminal:
                if not b.uses_controls:
                    Hxx += w * b.hess_xx(t, x[t], None)
                continue
            Hxx += w * b.hess_xx(t, x[t], controls_t)
            if b.uses_controls:
                Hux += w * b.hess_ux(t, x[t], controls_t, i)
                for j in range(N):
                    Huu[j] += w * b.hess_uu(t, x[t], controls_t, i, j)
                    Hxu[j] += w * b.hess_ux(t, x[t], controls_t, j).T
            else:
                # state-only bases still may carry mixed curvature in
                # principle; grad_u is identically zero for them, so not here
                pass
        return Hxx, Hux, Huu, Hxu

    for i in range(N):
        lam = costates.lams[i]
        for t in range(1, T):
            r0 = rows.x_stat_row(i, t)
            terminal = (t == T - 1)
            Hxx, _, _, Hxu = cost_hessians(i, t, terminal)
            if not terminal:
                curv = dyn.hess_step_vec(t, x[t], trajectory.controls_at(t),
                                         lam[t])
                Hxx = Hxx - curv[:n, :n]
                for j in range(N):
                    c0 = n + u_block_off[j]
                    Hxu[j] = Hxu[j] - curv[:n, c0:c0 + game.control_dims[j]]
            sink.add(r0, cols.x_slice(t).start, Hxx)
            if not terminal:
                for j in range(N):
                    sink.add(r0, cols.u_slice(j, t).start, Hxu[j])
                sink.add(r0, cols.lam_slice(i, t).start, -jac_x[t].T)
            sink.add(r0, cols.lam_slice(i, t - 1).start, eye_n)
            if include_theta:
                controls_t = None if terminal else trajectory.controls_at(t)
                for ell, b in enumerate(game.bases[i]):
                    if terminal and b.uses_controls:
                        continue
                    col = cols.theta_slice(i).start + ell
                    g = b.grad_x(t, x[t], controls_t)
                    sink.add(r0, col, g.reshape(-1, 1))

        m_i = game.control_dims[i]
        for t in range(T - 1):
            r0 = rows.u_stat_row(i, t)
            _, Hux, Huu, _ = cost_hessians(i, t, False)
            curv = dyn.hess_step_vec(t, x[t], trajectory.controls_at(t),
                                     lam[t])
            ci = n + u_block_off[i]
            Hux = Hux - curv[ci:ci + m_i, :n]
            sink.add(r0, cols.x_slice(t).start, Hux)
            for j in range(N):
                cj = n + u_block_off[j]
                block = Huu[j] - curv[ci:ci + m_i, cj:cj + game.control_dims[j]]
                sink.add(r0, cols.u_slice(j, t).start, block)
            sink.add(r0, cols.lam_slice(i, t).start, -jac_u[t][i].T)
            if include_theta:
                controls_t = trajectory.controls_at(t)
                for ell, b in enumerate(game.bases[i]):
                    if not b.uses_controls:
                        continue
                    col = cols.theta_slice(i).start + ell
                    g = b.grad_u(t, x[t], controls_t, i)
                    sink.add(r0, col, g.reshape(-1, 1))

    for t in range(T - 1):
        r0 = rows.dynamics_row(t)
        sink.add(r0, cols.x_slice(t + 1).start, eye_n)
        sink.add(r0, cols.x_slice(t).start, -jac_x[t])
        for j in range(N):
            sink.add(r0, cols.u_slice(j, t).start, -jac_u[t][j])

    return sink.matrix((rows.dim, cols.dim))


def jacobian_F(game, trajectory):
    """Sparse Jacobian of the dynamics defect rows with respect to (x, u)."""
    T, n = game.horizon, game.state_dim
    N = game.num_players
    cols = VariableLayout.for_game(game, include_costates=False)
    sink = _TripletSink()
    x = trajectory.states
    dyn = game.dynamics
    eye_n = np.eye(n)
    for t in range(T - 1):
        u_t = trajectory.controls_at(t)
        r0 = t * n
        sink.add(r0, cols.x_slice(t + 1).start, eye_n)
        sink.add(r0, cols.x_slice(t).start, -dyn.jac_x(t, x[t], u_t))
        for j in range(N):
            sink.add(r0, cols.u_slice(j, t).start, -dyn.jac_u(t, x[t], u_t, j))
    return sink.matrix(((T - 1) * n, cols.dim))
