"""Discrete-time dynamics models with analytic Jacobians.

All models share the signature x_{t+1} = f_t(x_t, u^1_t, ..., u^N_t) with one
control vector per player. Stage indices t are 0-based throughout the
package: states live at t = 0..T-1, controls and costates at t = 0..T-2.
"""

from __future__ import annotations

import numpy as np


class DynamicsModel:
    """Base class for multi-player discrete-time dynamics.

    Subclasses implement `step`, `jac_x` and `jac_u`. `hess_step_vec`, the
    Hessian of z -> w . f_t(z) over the stacked stage variables
    z = (x, u^1, ..., u^N), is needed by stationarity Jacobians; the default
    uses central differences of the analytic Jacobians, which is accurate
    enough for the 1e-5 derivative checks. Models with cheap curvature
    (linear: zero; unicycle: two trig entries) override it.
    """

    state_dim: int = 0
    control_dims: tuple = ()

    def step(self, t, x, controls):
        raise NotImplementedError

    def jac_x(self, t, x, controls):
        """Jacobian of f_t with respect to x, shape (n, n)."""
        raise NotImplementedError

    def jac_u(self, t, x, controls, player):
        """Jacobian of f_t with respect to u^player, shape (n, m_player)."""
        raise NotImplementedError

    def _grad_contract(self, t, x, controls, w):
        # gradient of w . f_t over (x, u^1, ..., u^N)
        parts = [self.jac_x(t, x, controls).T @ w]
        for i in range(len(self.control_dims)):
            parts.append(self.jac_u(t, x, controls, i).T @ w)
        return np.concatenate(parts)

    def hess_step_vec(self, t, x, controls, w, h=1e-6):
        """Symmetric Hessian of z -> w . f_t(z), z = (x, u^1..u^N)."""
        n = self.state_dim
        dims = [n] + list(self.control_dims)
        nz = sum(dims)
        H = np.zeros((nz, nz))
        z0 = np.concatenate([np.asarray(x, dtype=float)]
                            + [np.asarray(u, dtype=float) for u in controls])

        def split(z):
            out = []
            off = 0
            for d in dims:
                out.append(z[off:off + d])
                off += d
            return out[0], out[1:]

        for k in range(nz):
            zp = z0.copy()
            zm = z0.copy()
            zp[k] += h
            zm[k] -= h
            xp, up = split(zp)
            xm, um = split(zm)
            gp = self._grad_contract(t, xp, up, w)
            gm = self._grad_contract(t, xm, um, w)
            H[:, k] = (gp - gm) / (2.0 * h)
        return 0.5 * (H + H.T)


class LinearDynamics(DynamicsModel):
    """x_{t+1} = A x_t + sum_i B_i u^i_t."""

    def __init__(self, A, B_list):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        self.A = A
        self.B = [np.asarray(B, dtype=float) for B in B_list]
        for B in self.B:
            if B.shape[0] != A.shape[0]:
                raise ValueError("B row count must match state dimension")
        self.state_dim = A.shape[0]
        self.control_dims = tuple(B.shape[1] for B in self.B)

    def step(self, t, x, controls):
        out = self.A @ x
        for B, u in zip(self.B, controls):
            out = out + B @ u
        return out

    def jac_x(self, t, x, controls):
        return self.A

    def jac_u(self, t, x, controls, player):
        return self.B[player]

    def hess_step_vec(self, t, x, controls, w, h=None):
        nz = self.state_dim + sum(self.control_dims)
        return np.zeros((nz, nz))


def double_integrator_matrices(dt):
    """Single-agent planar double integrator blocks (position, velocity)."""
    A = np.array([
        [1.0, 0.0, dt, 0.0],
        [0.0, 1.0, 0.0, dt],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    B = np.array([
        [0.0, 0.0],
        [0.0, 0.0],
        [dt, 0.0],
        [0.0, dt],
    ])
    return A, B


class UnicycleDynamics(DynamicsModel):
    """N decoupled unicycles, Euler-discretized.

    Per player the state block is (p_x, p_y, psi, v) and the control is
    (omega, a):

        p_x+ = p_x + dt v cos(psi)
        p_y+ = p_y + dt v sin(psi)
        psi+ = psi + dt omega
        v+   = v + dt a
    """

    BLOCK = 4

    def __init__(self, num_players, dt):
        if num_players < 1:
            raise ValueError("need at least one player")
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.num_players = num_players
        self.dt = float(dt)
        self.state_dim = self.BLOCK * num_players
        self.control_dims = tuple(2 for _ in range(num_players))

    def step(self, t, x, controls):
        x = np.asarray(x, dtype=float)
        out = x.copy()
        dt = self.dt
        for i in range(self.num_players):
            o = self.BLOCK * i
            psi, v = x[o + 2], x[o + 3]
            w, a = controls[i]
            out[o + 0] = x[o + 0] + dt * v * np.cos(psi)
            out[o + 1] = x[o + 1] + dt * v * np.sin(psi)
            out[o + 2] = psi + dt * w
            out[o + 3] = v + dt * a
        return out

    def jac_x(self, t, x, controls):
        J = np.eye(self.state_dim)
        dt = self.dt
        for i in range(self.num_players):
            o = self.BLOCK * i
            psi, v = x[o + 2], x[o + 3]
            J[o + 0, o + 2] = -dt * v * np.sin(psi)
            J[o + 0, o + 3] = dt * np.cos(psi)
            J[o + 1, o + 2] = dt * v * np.cos(psi)
            J[o + 1, o + 3] = dt * np.sin(psi)
        return J

    def jac_u(self, t, x, controls, player):
        J = np.zeros((self.state_dim, 2))
        o = self.BLOCK * player
        J[o + 2, 0] = self.dt
        J[o + 3, 1] = self.dt
        return J

    def hess_step_vec(self, t, x, controls, w, h=None):
        # controls enter linearly; only the (psi, v) block of each player
        # carries curvature
        nz = self.state_dim + sum(self.control_dims)
        H = np.zeros((nz, nz))
        dt = self.dt
        for i in range(self.num_players):
            o = self.BLOCK * i
            psi, v = x[o + 2], x[o + 3]
            wx, wy = w[o + 0], w[o + 1]
            c, s = np.cos(psi), np.sin(psi)
            H[o + 2, o + 2] = dt * v * (-wx * c - wy * s)
            H[o + 2, o + 3] = dt * (-wx * s + wy * c)
            H[o + 3, o + 2] = H[o + 2, o + 3]
        return H
