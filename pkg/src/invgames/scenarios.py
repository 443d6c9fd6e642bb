"""Built-in scenarios: game builders plus a registry with ground truth.

Each registry entry fixes the geometry, the true basis weights theta* (uniform
over all bases) and the initial state, so experiments and tests share one
source of truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .costs import (ControlEffortBasis, GoalDistanceBasis, ProximityBasis,
                    QuadraticControlBasis, QuadraticStateBasis, SpeedBasis,
                    StateDeviationBasis)
from .dynamics import LinearDynamics, UnicycleDynamics, double_integrator_matrices
from .games import CostParameters, GameDefinition


def _check_psd(M, name):
    evals = np.linalg.eigvalsh(0.5 * (M + M.T))
    if evals.min() < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite")


def _check_pd(M, name):
    evals = np.linalg.eigvalsh(0.5 * (M + M.T))
    if evals.min() <= 0:
        raise ValueError(f"{name} must be positive definite")


def make_double_integrator_lq(horizon=25, dt=0.1, Q_list=None, R_list=None,
                              param_floor=0.01):
    """Two planar double integrators with quadratic state/control costs.

    Per player the bases are 0.5 x'Q x and 0.5 u'R u; by default Q is the
    identity on the player's own position block and R the identity.
    """
    A1, B1 = double_integrator_matrices(dt)
    A = block_diag(A1, A1)
    B = [np.vstack([B1, np.zeros_like(B1)]), np.vstack([np.zeros_like(B1), B1])]
    dyn = LinearDynamics(A, B)
    n = dyn.state_dim

    if Q_list is None:
        Q_list = []
        for i in range(2):
            Q = np.zeros((n, n))
            Q[4 * i, 4 * i] = 1.0
            Q[4 * i + 1, 4 * i + 1] = 1.0
            Q_list.append(Q)
    if R_list is None:
        R_list = [np.eye(2), np.eye(2)]
    bases = []
    for i in range(2):
        _check_psd(Q_list[i], f"Q[{i}]")
        _check_pd(R_list[i], f"R[{i}]")
        bases.append((QuadraticStateBasis(Q_list[i]),
                      QuadraticControlBasis(i, R_list[i])))

    return GameDefinition(
        num_players=2, horizon=horizon, state_dim=n, control_dims=(2, 2),
        dt=dt, dynamics=dyn, bases=tuple(bases),
        position_indices=((0, 1), (4, 5)),
        param_floor=param_floor, label="lq2")


# basis order shared by the unicycle-family builders
UNICYCLE_BASIS_LABELS = ("goal", "proximity", "speed", "yaw_rate", "accel")


def _unicycle_indices(num_players):
    pos = tuple((4 * i, 4 * i + 1) for i in range(num_players))
    heading = tuple(4 * i + 2 for i in range(num_players))
    speed = tuple(4 * i + 3 for i in range(num_players))
    return pos, heading, speed


def make_unicycle_game(num_players, horizon, dt, goals, t_goal=None,
                       guard=1e-6, param_floor=0.01, label="unicycle"):
    """N unicycles, each weighting goal attraction, pairwise proximity,
    speed and the two control efforts."""
    if num_players < 2:
        raise ValueError("unicycle game needs at least two players")
    goals = np.asarray(goals, dtype=float)
    if goals.shape != (num_players, 2):
        raise ValueError("need one planar goal per player")
    if t_goal is None:
        t_goal = horizon
    dyn = UnicycleDynamics(num_players, dt)
    pos, heading, speed = _unicycle_indices(num_players)
    bases = []
    for i in range(num_players):
        bases.append((
            GoalDistanceBasis(pos[i], goals[i], horizon, t_goal),
            ProximityBasis(i, pos, guard=guard),
            SpeedBasis(speed[i]),
            ControlEffortBasis(i, 0),
            ControlEffortBasis(i, 1),
        ))
    return GameDefinition(
        num_players=num_players, horizon=horizon, state_dim=dyn.state_dim,
        control_dims=dyn.control_dims, dt=dt, dynamics=dyn,
        bases=tuple(bases), position_indices=pos,
        heading_indices=heading, speed_indices=speed,
        param_floor=param_floor, label=label)


def make_highway_game(horizon, dt, lanes, speeds, t_goal=None,
                      lane_weight=1.0, speed_weight=1.0, guard=1e-6,
                      param_floor=0.01):
    """Five unicycles on a two-lane stretch; the goal basis is a quadratic
    penalty on deviation from a target lane and preferred speed."""
    lanes = np.asarray(lanes, dtype=float)
    speeds = np.asarray(speeds, dtype=float)
    if lanes.shape != (5,) or speeds.shape != (5,):
        raise ValueError("highway scene expects 5 target lanes and speeds")
    num_players = 5
    if t_goal is None:
        t_goal = horizon
    dyn = UnicycleDynamics(num_players, dt)
    pos, heading, speed = _unicycle_indices(num_players)
    bases = []
    for i in range(num_players):
        dev = StateDeviationBasis(
            idx=(pos[i][1], speed[i]),
            target=(lanes[i], speeds[i]),
            weights=(lane_weight, speed_weight),
            horizon=horizon, t_goal=t_goal)
        bases.append((
            dev,
            ProximityBasis(i, pos, guard=guard),
            SpeedBasis(speed[i]),
            ControlEffortBasis(i, 0),
            ControlEffortBasis(i, 1),
        ))
    return GameDefinition(
        num_players=num_players, horizon=horizon, state_dim=dyn.state_dim,
        control_dims=dyn.control_dims, dt=dt, dynamics=dyn,
        bases=tuple(bases), position_indices=pos,
        heading_indices=heading, speed_indices=speed,
        param_floor=param_floor, label="highway5")


@dataclass(frozen=True)
class Scenario:
    name: str
    game: GameDefinition
    x1: np.ndarray
    theta_star: CostParameters
    basis_labels: tuple
    obs_kinds: tuple


def build_scenario(name, horizon=None, dt=None):
    """Instantiate a registered scenario, optionally overriding T and dt."""
    if name == "lq2":
        T = 25 if horizon is None else int(horizon)
        step = 0.1 if dt is None else float(dt)
        game = make_double_integrator_lq(horizon=T, dt=step)
        x1 = np.array([-1.0, 0.0, 0.5, 0.2,
                       1.0, 0.5, -0.5, 0.0])
        labels = (("state_quad", "control_quad"),) * 2
        kinds = ("full",)
    elif name == "unicycle2":
        T = 25 if horizon is None else int(horizon)
        step = 1.0 if dt is None else float(dt)
        # two agents swap sides, offset laterally so they pass head-on
        starts = np.array([[-2.0, -0.4, 0.0, 0.25],
                           [2.0, 0.4, np.pi, 0.2]])
        goals = np.array([[2.0, -0.4], [-2.0, 0.4]])
        game = make_unicycle_game(2, T, step, goals, label="unicycle2")
        x1 = starts.reshape(-1)
        labels = (UNICYCLE_BASIS_LABELS,) * 2
        kinds = ("full", "partial")
    elif name == "highway5":
        T = 25 if horizon is None else int(horizon)
        step = 1.0 if dt is None else float(dt)
        # (p_x, lane, psi, v) per car on a two-lane stretch; cars 1 and 4
        # change lanes, the rest keep theirs
        starts = np.array([[0.0, 0.0, 0.0, 0.50],
                           [-3.0, 1.0, 0.0, 0.55],
                           [3.0, 0.0, 0.0, 0.45],
                           [6.0, 1.0, 0.0, 0.50],
                           [-6.0, 0.0, 0.0, 0.50]])
        lanes = np.array([1.0, 1.0, 0.0, 0.0, 0.0])
        speeds = np.array([0.50, 0.55, 0.45, 0.50, 0.50])
        game = make_highway_game(T, step, lanes, speeds)
        x1 = starts.reshape(-1)
        labels = (UNICYCLE_BASIS_LABELS,) * 5
        kinds = ("full", "partial")
    else:
        raise ValueError(f"unknown scenario '{name}'")
    theta = CostParameters.uniform(game)
    return Scenario(name=name, game=game, x1=x1, theta_star=theta,
                    basis_labels=labels, obs_kinds=kinds)


SCENARIO_NAMES = ("lq2", "unicycle2", "highway5")
