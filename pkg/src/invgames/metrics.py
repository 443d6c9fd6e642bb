"""Error metrics for estimated objectives and trajectories."""

from __future__ import annotations

import numpy as np

from .games import CostParameters


def _weight_lists(params):
    if isinstance(params, CostParameters):
        return params.weights
    return [np.asarray(w, dtype=float) for w in params]


def cosine_error(params_true, params_est):
    """1 minus the mean per-player cosine similarity, in [0, 2].

    Per-player normalization makes the metric invariant to rescaling any
    single player's weights, which is exactly the freedom a demonstration
    cannot pin down.
    """
    true_w = _weight_lists(params_true)
    est_w = _weight_lists(params_est)
    if len(true_w) != len(est_w):
        raise ValueError("player count mismatch")
    total = 0.0
    for wt, we in zip(true_w, est_w):
        wt = np.asarray(wt, dtype=float)
        we = np.asarray(we, dtype=float)
        if wt.shape != we.shape:
            raise ValueError("per-player weight length mismatch")
        nt = float(np.linalg.norm(wt))
        ne = float(np.linalg.norm(we))
        if nt == 0.0 or ne == 0.0:
            raise ValueError("zero-norm weight vector")
        total += float(wt @ we) / (nt * ne)
    return 1.0 - total / len(true_w)


def _states(traj):
    return traj if isinstance(traj, np.ndarray) else traj.states


def reconstruction_error(game, traj_true, traj_rec, stages=None):
    """Mean per-agent, per-step Euclidean position error in meters.

    stages selects the 0-based steps to average over (default: all steps of
    the true trajectory).
    """
    x_true = _states(traj_true)
    x_rec = _states(traj_rec)
    if stages is None:
        stages = range(x_true.shape[0])
    stages = list(stages)
    if not stages:
        raise ValueError("empty stage range")
    total = 0.0
    for i in range(game.num_players):
        px, py = game.position_indices[i]
        for t in stages:
            d = x_rec[t, [px, py]] - x_true[t, [px, py]]
            total += float(np.linalg.norm(d))
    return total / (game.num_players * len(stages))
