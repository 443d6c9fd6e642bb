"""Two-stage comparison estimator: smooth first, then fit weights.

With the trajectory frozen at the smoothed estimate, the stationarity rows
are linear in (theta, lam) and decouple across players, so each player
reduces to a small constrained linear least-squares problem. The same
machinery solved as an exact linear system covers the noiseless
full-information case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .forward import reference_equilibrium
from .games import CostParameters, Costates, Trajectory, window_game
from .kkt import ResidualLayout, VariableLayout, assemble_G, jacobian_G


@dataclass
class BaselineEstimate:
    """Per-player weight fit on a fixed trajectory.

    params carries per-player unit sums (the decoupled solves admit no
    cross-player constraint). residual_sq is the full squared norm of the
    stacked optimality system at the estimate.
    """

    params: CostParameters
    costates: Costates
    trajectory: Trajectory
    residual_sq: float
    rank_deficient: bool = False
    ill_conditioned: bool = False


@dataclass
class ReducedSolution:
    """Exact per-player linear solve on noiseless (x, u) data."""

    params: CostParameters
    costates: Costates
    residual_inf: float
    consistent: bool
    under_determined: bool

    def __iter__(self):
        # unpacks as (theta, lam)
        yield self.params
        yield self.costates

    @property
    def theta(self):
        return self.params


def _player_systems(game, trajectory):
    """Per-player matrices M_i mapping (theta_i, lam_i) to that player's
    stationarity rows; exact because the rows are linear in both."""
    zero_costates = Costates.zeros(game)
    zero_params = CostParameters([np.zeros(k) for k in game.basis_counts])
    J = jacobian_G(game, trajectory, zero_costates, zero_params,
                   include_theta=True).tocsc()
    cols = VariableLayout.for_game(game, include_theta=True)
    rows = ResidualLayout(game.horizon, game.state_dim,
                          tuple(game.control_dims))
    T, n = game.horizon, game.state_dim
    systems = []
    for i in range(game.num_players):
        r0 = rows.player_offset(i)
        r1 = r0 + (T - 1) * (n + game.control_dims[i])
        th = cols.theta_slice(i)
        lm = cols.lam_slice(i, 0).start
        lam_cols = slice(lm, lm + (T - 1) * n)
        M = np.hstack([J[r0:r1, th].toarray(), J[r0:r1, lam_cols].toarray()])
        systems.append(M)
    return systems


def _affine_floor_lstsq(M, k, floor):
    """min ||M (theta, lam)||  s.t.  sum(theta) = 1, theta >= floor.

    The unit-sum constraint is eliminated exactly; the floor is enforced by
    adding violated coordinates to a clamped active set (never removed; at
    most k passes).
    """
    n_lam = M.shape[1] - k
    active = []
    rank_deficient = False
    for _ in range(k + 1):
        free = [j for j in range(k) if j not in active]
        theta = np.full(k, floor)
        if not free:
            break
        mass = 1.0 - floor * len(active)
        theta[free] = mass / len(free)
        # basis of the free-coordinate simplex directions
        ones = np.ones((1, len(free)))
        Z = scipy.linalg.null_space(ones)
        A = np.hstack([M[:, free] @ Z, M[:, k:]])
        b = -M[:, :k] @ theta
        sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
        if rank < A.shape[1]:
            rank_deficient = True
        nw = Z.shape[1]
        theta[free] = theta[free] + Z @ sol[:nw]
        lam = sol[nw:]
        violated = [j for j in free if theta[j] < floor - 1e-12]
        if not violated:
            return theta, lam, rank_deficient
        worst = min(violated, key=lambda j: theta[j])
        active.append(worst)
    theta = np.full(k, floor)
    theta /= theta.sum()
    return theta, np.zeros(n_lam), True


def baseline_estimate(game, trajectory, floor=None):
    """Fit per-player weights and costates to a fixed trajectory by
    minimizing the squared stationarity residual."""
    floor = game.param_floor if floor is None else floor
    T, n = game.horizon, game.state_dim
    systems = _player_systems(game, trajectory)
    weights = []
    lams = []
    rank_deficient = False
    for i, M in enumerate(systems):
        k = game.basis_counts[i]
        theta, lam, deficient = _affine_floor_lstsq(M, k, floor)
        rank_deficient = rank_deficient or deficient
        weights.append(theta)
        lams.append(lam.reshape(T - 1, n))
    params = CostParameters(weights)
    costates = Costates(lams)
    residual = assemble_G(game, trajectory, costates, params)
    return BaselineEstimate(params=params, costates=costates,
                            trajectory=trajectory,
                            residual_sq=residual.two_norm ** 2,
                            rank_deficient=rank_deficient)


def reduced_linear_solve(game, trajectory, tolerance=1e-10):
    """Solve the stationarity rows exactly on noiseless (x, u) data.

    Per player, [M_i; sum-row] (theta_i, lam_i) = [0; 1]; unpacks as
    (theta, lam). consistent reports whether the homogeneous rows are met to
    the tolerance; under_determined reports rank deficiency (minimum-norm
    solution returned).
    """
    T, n = game.horizon, game.state_dim
    systems = _player_systems(game, trajectory)
    weights = []
    lams = []
    worst = 0.0
    under = False
    for i, M in enumerate(systems):
        k = game.basis_counts[i]
        row = np.zeros((1, M.shape[1]))
        row[0, :k] = 1.0
        A = np.vstack([M, row])
        b = np.zeros(A.shape[0])
        b[-1] = 1.0
        sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
        if rank < A.shape[1]:
            under = True
        worst = max(worst, float(np.max(np.abs(M @ sol))))
        weights.append(sol[:k])
        lams.append(sol[k:].reshape(T - 1, n))
    return ReducedSolution(params=CostParameters(weights),
                           costates=Costates(lams),
                           residual_inf=worst,
                           consistent=worst <= tolerance,
                           under_determined=under)


def baseline_predict(game, params, x_start, s_pred, start=None,
                     options=None):
    """Forecast by re-solving the remaining game from a state estimate.

    x_start sits at global stage `start` (0-based; default: the stage
    leaving exactly s_pred steps ahead). The remainder of the game keeps its
    original timeline, so horizon-anchored costs still fire at the true
    final steps. Returns the window trajectory; its states[1:s_pred+1] are
    the forecast. Forward non-convergence propagates (callers flag such
    estimates as ill-conditioned).
    """
    if s_pred < 1:
        raise ValueError("prediction length must be at least one step")
    if start is None:
        start = game.horizon - 1 - s_pred
    length = game.horizon - start
    if length < s_pred + 1:
        raise ValueError("prediction window extends past the game horizon")
    wgame = window_game(game, start, length)
    traj, _, _ = reference_equilibrium(wgame, params, x_start,
                                       options=options)
    return traj
