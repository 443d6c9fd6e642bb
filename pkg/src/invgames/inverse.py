"""Joint maximum-likelihood estimation of cost weights from observed play.

The estimator treats the stacked equilibrium conditions G(x, u, lam; theta)=0
as equality constraints on a Gaussian observation likelihood and solves for
all unknowns at once. Three entry points share one solve path: offline
(every stage observed), prediction (a prefix observed, the remainder of the
trajectory recovered as forecast), and receding horizon (a sliding
fixed-lag window warm-started from the previous fit).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .games import (CostParameters, Costates, Trajectory, truncate_game,
                    window_game)
from .kkt import VariableLayout, assemble_F, assemble_G, jacobian_F, jacobian_G
from .lsq import GaussNewtonOptions, solve_constrained_gauss_newton
from .observations import ObservationSequence, negative_log_likelihood
from .reports import (DegenerateParametersError, NonConvergenceError,
                      SolveReport)


@dataclass(frozen=True)
class InverseSolveOptions:
    max_iterations: int = 200
    constraint_tolerance: float = 1e-6
    optimality_tolerance: float = 1e-6
    armijo: float = 1e-4
    backtrack_factor: float = 0.5
    min_step: float = 1e-10
    damping_init: float = 1e-6
    penalty_init: float = 1.0
    boundary_fraction: float = 0.995
    # optional multi-start over perturbed theta initializations
    multistart: int = 0
    multistart_seed: int = 0
    multistart_scale: float = 0.5

    def __post_init__(self):
        if min(self.constraint_tolerance, self.optimality_tolerance,
               self.min_step) <= 0:
            raise ValueError("tolerances must be positive")

    def gauss_newton(self):
        return GaussNewtonOptions(
            max_iterations=self.max_iterations,
            constraint_tolerance=self.constraint_tolerance,
            optimality_tolerance=self.optimality_tolerance,
            armijo=self.armijo, backtrack_factor=self.backtrack_factor,
            min_step=self.min_step, damping_init=self.damping_init,
            penalty_init=self.penalty_init,
            boundary_fraction=self.boundary_fraction)


@dataclass
class InverseProblem:
    """A game, a stream of observations of it, and how they relate."""

    game: object
    observations: ObservationSequence
    model: object
    options: InverseSolveOptions = None
    floor: float = None

    def __post_init__(self):
        if self.observations.start != 0:
            raise ValueError("observations must start at the first stage")
        if not (1 <= len(self.observations) <= self.game.horizon):
            raise ValueError("observed horizon outside [1, T]")
        if self.observations.values.shape[1] != self.model.obs_dim:
            raise ValueError("observation dimension mismatch")
        if self.options is None:
            self.options = InverseSolveOptions()
        if self.floor is None:
            self.floor = self.game.param_floor

    @property
    def observed_horizon(self):
        return len(self.observations)

    @property
    def horizon(self):
        return self.game.horizon


@dataclass
class InverseEstimate:
    """Joint estimate; states up to observed_horizon are filtered, the rest
    are predictions carried by the same equilibrium conditions."""

    params: CostParameters
    trajectory: Trajectory
    costates: Costates
    report: SolveReport
    nll: float
    kkt_residual_inf: float
    observed_horizon: int
    window_start: int = 0

    @property
    def filtered_states(self):
        return self.trajectory.states[:self.observed_horizon]

    @property
    def predicted_states(self):
        return self.trajectory.states[self.observed_horizon:]


def normalize_params(params, floor):
    """Clamp every weight to the floor, then scale to global unit sum."""
    if not isinstance(params, CostParameters):
        params = CostParameters([np.asarray(w, dtype=float) for w in params])
    stacked = params.stacked()
    if not np.all(np.isfinite(stacked)):
        raise ValueError("non-finite parameter entries")
    clamped = [np.maximum(np.asarray(w, dtype=float), floor)
               for w in params.weights]
    total = sum(float(np.sum(w)) for w in clamped)
    return CostParameters([w / total for w in clamped])


def _observation_residual_jacobian(model, num_obs, total_dim):
    # constant: the state block leads the flat vector, so column offsets of
    # stage t are t*n regardless of what else the layout carries
    H = model.matrix
    blocks = sp.block_diag([-H] * num_obs, format="csr")
    pad = sp.csr_matrix((blocks.shape[0], total_dim - blocks.shape[1]))
    return sp.hstack([blocks, pad], format="csr")


def _scatter_states(model, values):
    """Lift observations back into state space (pseudo-inverse of H)."""
    lift = np.linalg.pinv(model.matrix)
    return values @ lift.T


def _backfill_speeds(game, states, model):
    """Fill unobserved speed coordinates from position differences projected
    on the heading, which keeps turning segments consistent."""
    observed = set(np.nonzero(np.any(model.matrix != 0, axis=0))[0])
    if game.speed_indices is None or game.heading_indices is None:
        return
    K = states.shape[0]
    if K < 2:
        return
    for i in range(game.num_players):
        v_idx = game.speed_indices[i]
        if v_idx in observed:
            continue
        px, py = game.position_indices[i]
        psi = states[:, game.heading_indices[i]]
        dx = np.diff(states[:, px])
        dy = np.diff(states[:, py])
        v = (dx * np.cos(psi[:-1]) + dy * np.sin(psi[:-1])) / game.dt
        states[:-1, v_idx] = v
        states[-1, v_idx] = v[-1]


def _initial_controls(game, states):
    """Per-step least-squares fit of the controls to the state increments."""
    T = states.shape[0]
    controls = [np.zeros((game.horizon - 1, m)) for m in game.control_dims]
    zero_u = [np.zeros(m) for m in game.control_dims]
    for t in range(min(T, game.horizon) - 1):
        base = game.dynamics.step(t, states[t], zero_u)
        Ju = np.hstack([game.dynamics.jac_u(t, states[t], zero_u, i)
                        for i in range(game.num_players)])
        u_flat, *_ = np.linalg.lstsq(Ju, states[t + 1] - base, rcond=None)
        off = 0
        for i, m in enumerate(game.control_dims):
            controls[i][t] = u_flat[off:off + m]
            off += m
    return controls


def _extend_by_rollout(game, states, controls, from_stage):
    for t in range(from_stage, game.horizon - 1):
        u_t = [u[t] for u in controls]
        states[t + 1] = game.dynamics.step(t, states[t], u_t)


def presolve_smooth(game, observations, model, options=None):
    """Dynamically feasible trajectory closest to the observations.

    Minimizes the observation NLL subject to the dynamics alone; stages past
    the observed horizon are extended by a zero-control rollout. Used as the
    initialization of the full solve and as the baseline's first stage.
    """
    opts = options or InverseSolveOptions()
    if observations.start != 0:
        raise ValueError("observations must start at the first stage")
    T, n = game.horizon, game.state_dim
    K = len(observations)

    guess = np.zeros((T, n))
    guess[:K] = _scatter_states(model, observations.values)
    _backfill_speeds(game, guess[:K], model)

    if K < 2:
        controls = [np.zeros((T - 1, m)) for m in game.control_dims]
        _extend_by_rollout(game, guess, controls, 0)
        report = SolveReport(converged=True, iterations=0,
                             num_variables=n, message="single stage")
        return Trajectory(guess, controls), report

    sub = truncate_game(game, K) if K < T else game
    controls0 = _initial_controls(sub, guess[:K])
    traj0 = Trajectory(guess[:K].copy(),
                       [u[:K - 1].copy() for u in controls0])

    layout = VariableLayout.for_game(sub, include_costates=False)
    weights = np.tile(model.weights(), K)
    y = observations.values
    H = model.matrix
    x_size = K * n

    def residuals(z):
        X = z[:x_size].reshape(K, n)
        return (y - X @ H.T).reshape(-1)

    Jr = _observation_residual_jacobian(model, K, layout.dim)

    def constraints(z):
        traj, _, _ = layout.unpack(z)
        return assemble_F(sub, traj)

    def constraint_jac(z):
        traj, _, _ = layout.unpack(z)
        return jacobian_F(sub, traj)

    z0 = layout.pack(traj0)
    z, _, report = solve_constrained_gauss_newton(
        z0, residuals, lambda z: Jr, weights, constraints, constraint_jac,
        opts.gauss_newton())
    smoothed, _, _ = layout.unpack(z)

    states = np.zeros((T, n))
    states[:K] = smoothed.states
    controls = [np.zeros((T - 1, m)) for m in game.control_dims]
    for i in range(game.num_players):
        controls[i][:K - 1] = smoothed.controls[i]
    _extend_by_rollout(game, states, controls, K - 1)
    return Trajectory(states, controls), report


def _default_init(problem):
    traj, _ = presolve_smooth(problem.game, problem.observations,
                              problem.model, problem.options)
    return traj, Costates.zeros(problem.game), \
        CostParameters.uniform(problem.game)


def _solve_core(problem, init=None):
    game = problem.game
    opts = problem.options
    floor = problem.floor
    K = problem.observed_horizon
    T, n = game.horizon, game.state_dim

    if init is None:
        traj0, costates0, params0 = _default_init(problem)
    else:
        traj0, costates0, params0 = init

    layout = VariableLayout.for_game(game, include_costates=True,
                                     include_theta=True)
    theta_idx = layout.theta_indices()
    weights = np.tile(problem.model.weights(), K)
    y = problem.observations.values
    H = problem.model.matrix
    x_size = K * n

    def residuals(z):
        X = z[:x_size].reshape(K, n)
        return (y - X @ H.T).reshape(-1)

    Jr = _observation_residual_jacobian(problem.model, K, layout.dim)

    def constraints(z):
        traj, costates, params = layout.unpack(z)
        g = assemble_G(game, traj, costates, params).vector
        return np.concatenate([g, [z[theta_idx].sum() - 1.0]])

    ones = sp.csr_matrix((np.ones(len(theta_idx)),
                          (np.zeros(len(theta_idx)), theta_idx)),
                         shape=(1, layout.dim))

    def constraint_jac(z):
        traj, costates, params = layout.unpack(z)
        J = jacobian_G(game, traj, costates, params, include_theta=True)
        return sp.vstack([J, ones], format="csr")

    def run(start_params):
        z0 = layout.pack(traj0, costates0, start_params)
        z0[theta_idx] = np.maximum(z0[theta_idx], floor)
        return solve_constrained_gauss_newton(
            z0, residuals, lambda z: Jr, weights, constraints,
            constraint_jac, opts.gauss_newton(),
            floor_index=theta_idx, floor_value=floor)

    starts = [params0]
    for k in range(opts.multistart):
        rng = np.random.default_rng((opts.multistart_seed, k))
        noise = np.exp(opts.multistart_scale
                       * rng.standard_normal(len(theta_idx)))
        perturbed = normalize_params(
            CostParameters.from_stacked(game, params0.stacked() * noise),
            floor)
        starts.append(perturbed)

    best = None
    failure = None
    for start_params in starts:
        try:
            z, nu, report = run(start_params)
        except NonConvergenceError as err:
            failure = err
            continue
        r = residuals(z)
        key = (0, float(r @ (weights * r)))
        if best is None or key < best[0]:
            best = (key, z, report)
    if best is None:
        if failure.best is not None:
            failure.best = _finish(problem, layout, failure.best, K,
                                   failure.report or SolveReport())
        raise failure
    return _finish(problem, layout, best[1], K, best[2])


def _finish(problem, layout, z, observed_horizon, report):
    """Project onto the floor/unit-sum set and package the estimate.

    G is homogeneous of degree one in (theta, lam) at fixed (x, u), so the
    final normalization rescales both jointly and preserves the equilibrium
    conditions exactly.
    """
    game = problem.game
    floor = problem.floor
    traj, costates, params = layout.unpack(z)

    stacked = params.stacked()
    if np.all(stacked <= floor + 1e-12):
        raise DegenerateParametersError(
            "every weight is at the floor; the demonstration does not "
            "identify the objectives")
    clamped = [np.maximum(w, floor) for w in params.weights]
    scale = 1.0 / sum(float(np.sum(w)) for w in clamped)
    params = CostParameters([scale * w for w in clamped])
    costates = Costates([scale * lam for lam in costates.lams])

    residual = assemble_G(game, traj, costates, params)
    report.residual_inf = residual.inf_norm
    report.residual_two = residual.two_norm
    nll = negative_log_likelihood(problem.observations, traj, problem.model)
    return InverseEstimate(params=params, trajectory=traj, costates=costates,
                           report=report, nll=nll,
                           kkt_residual_inf=residual.inf_norm,
                           observed_horizon=observed_horizon)


def solve_inverse_offline(problem):
    """Estimate theta with every stage observed (possibly noisily)."""
    if problem.observed_horizon != problem.horizon:
        raise ValueError("offline estimation expects observations of every "
                         "stage; use solve_inverse_predict for a prefix")
    return _solve_core(problem)


def solve_inverse_predict(problem, init=None):
    """Estimate theta from an observed prefix; the tail of the returned
    trajectory is the forecast implied by the equilibrium conditions."""
    return _solve_core(problem, init=init)


def _shifted_init(game, previous):
    """Slide the previous window's estimate one stage left and pad the far
    end (zero final control, rolled final state, zero final costate)."""
    T = game.horizon
    states = np.zeros_like(previous.trajectory.states)
    states[:T - 1] = previous.trajectory.states[1:]
    controls = []
    for u in previous.trajectory.controls:
        shifted = np.zeros_like(u)
        shifted[:-1] = u[1:]
        controls.append(shifted)
    states[T - 1] = game.dynamics.step(T - 2, states[T - 2],
                                       [u[-1] for u in controls])
    lams = []
    for lam in previous.costates.lams:
        shifted = np.zeros_like(lam)
        shifted[:-1] = lam[1:]
        lams.append(shifted)
    return Trajectory(states, controls), Costates(lams), \
        previous.params.copy()


def solve_inverse_receding(game, observations, model, s_obs, s_pred,
                           options=None, warm_start=True, max_windows=None):
    """Sliding-window estimation over a stream of observations.

    Each window spans s_obs stages of history, the current stage, and s_pred
    stages of forecast; every window solves a problem of identical size.
    Returns one InverseEstimate per window, window_start marking its global
    offset.
    """
    if s_obs < 1 or s_pred < 1:
        raise ValueError("window extents must be at least one stage")
    if observations.start != 0:
        raise ValueError("the observation stream must start at stage 0")
    length = s_obs + s_pred + 1
    if length > game.horizon:
        raise ValueError("window longer than the game horizon")

    estimates = []
    previous = None
    current = s_obs  # 0-based index of the newest observed stage
    while current + s_pred <= game.horizon - 1 and current < len(observations):
        start = current - s_obs
        wgame = window_game(game, start, length)
        wobs = ObservationSequence(
            observations.values[start:current + 1].copy(),
            observations.sigma, observations.kind, 0)
        problem = InverseProblem(wgame, wobs, model, options)
        init = None
        if warm_start and previous is not None:
            init = _shifted_init(wgame, previous)
        try:
            est = _solve_core(problem, init=init)
        except NonConvergenceError:
            if init is None:
                raise
            est = _solve_core(problem, init=None)
        est.window_start = start
        estimates.append(est)
        previous = est
        current += 1
        if max_windows is not None and len(estimates) >= max_windows:
            break
    return estimates
