"""Forward solvers: Newton on the stacked optimality system, single-player
optimal control, and iterated best response."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .costs import BasisFunction
from .dynamics import DynamicsModel
from .games import Costates, CostParameters, GameDefinition, Trajectory, rollout
from .kkt import VariableLayout, assemble_G, jacobian_G
from .reports import NonConvergenceError, SingularSystemError, SolveReport


@dataclass(frozen=True)
class ForwardSolveOptions:
    max_iterations: int = 100
    residual_tolerance: float = 1e-8
    backtrack_factor: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-8
    levenberg_shift: float = 1e-8
    ibr_tolerance: float = 1e-6
    ibr_max_sweeps: int = 60
    ibr_relaxation: float = 1.0


def _check_params(game, params):
    if len(params.weights) != game.num_players:
        raise ValueError("need one weight vector per player")
    for i, (w, k) in enumerate(zip(params.weights, game.basis_counts)):
        if len(w) != k:
            raise ValueError(f"player {i} expects {k} weights")
        if np.any(np.asarray(w) <= 0):
            raise ValueError("basis weights must be strictly positive")


def _default_start(game, x1):
    traj = rollout(game, x1, [np.zeros((game.horizon - 1, m))
                              for m in game.control_dims])
    return traj, Costates.zeros(game)


def solve_olne_newton(game, params, x1, options=None, init=None):
    """Damped Newton root-finding on the stacked optimality system.

    The initial state is held fixed; unknowns are (x_1.., u, lam). Steps are
    backtracked on ||G||_2 and the Jacobian falls back to a Levenberg-style
    shifted normal system when the sparse LU factorization fails.
    Returns (trajectory, costates, report); raises NonConvergenceError with
    the best iterate on failure.
    """
    opts = options or ForwardSolveOptions()
    _check_params(game, params)
    start = time.perf_counter()
    x1 = np.asarray(x1, dtype=float)
    n = game.state_dim

    if init is None:
        traj, costates = _default_start(game, x1)
    else:
        traj, costates = init[0].copy(), init[1].copy()
        traj.states[0] = x1

    layout = VariableLayout.for_game(game)
    res = assemble_G(game, traj, costates, params)
    norm2 = res.two_norm
    history = [res.inf_norm]
    best = (traj.copy(), costates.copy(), res.inf_norm)

    report = SolveReport(num_variables=layout.dim - n,
                         residual_history=history)
    if res.inf_norm <= opts.residual_tolerance:
        report.converged = True
        report.residual_inf = res.inf_norm
        report.residual_two = norm2
        report.wall_time_s = time.perf_counter() - start
        return traj, costates, report

    for it in range(1, opts.max_iterations + 1):
        J = jacobian_G(game, traj, costates, params)[:, n:].tocsc()
        rhs = -res.vector
        z = layout.pack(traj, costates)

        def compute_step(shift):
            if shift == 0.0:
                try:
                    s = spla.splu(J).solve(rhs)
                except RuntimeError:
                    return None
            else:
                H = (J.T @ J + shift * sp.identity(J.shape[1])).tocsc()
                try:
                    s = spla.splu(H).solve(J.T @ rhs)
                except RuntimeError:
                    return None
            return s if np.all(np.isfinite(s)) else None

        def try_step(step):
            alpha = 1.0
            while alpha >= opts.min_step:
                z_try = z.copy()
                z_try[n:] = z[n:] + alpha * step
                traj_try, costates_try, _ = layout.unpack(z_try)
                res_try = assemble_G(game, traj_try, costates_try, params)
                if res_try.two_norm <= (1.0 - opts.armijo * alpha) * norm2:
                    return traj_try, costates_try, res_try
                alpha *= opts.backtrack_factor
            return None

        # pure Newton first, then a ladder of Levenberg shifts when the
        # factorization fails or the step is not a descent direction
        outcome = None
        factorized_any = False
        shift = 0.0
        for _ in range(14):
            step = compute_step(shift)
            if step is not None:
                factorized_any = True
                outcome = try_step(step)
                if outcome is not None:
                    break
            shift = opts.levenberg_shift if shift == 0.0 else shift * 10.0
        if outcome is None:
            report.iterations = it
            report.residual_inf = res.inf_norm
            report.residual_two = norm2
            report.wall_time_s = time.perf_counter() - start
            if not factorized_any:
                raise SingularSystemError(
                    "stacked system Jacobian is singular")
            report.message = "line search stalled"
            raise NonConvergenceError("Newton line search stalled",
                                      best=(best[0], best[1]), report=report)
        traj_try, costates_try, res_try = outcome

        traj, costates, res = traj_try, costates_try, res_try
        norm2 = res.two_norm
        history.append(res.inf_norm)
        if res.inf_norm < best[2]:
            best = (traj.copy(), costates.copy(), res.inf_norm)
        if res.inf_norm <= opts.residual_tolerance:
            report.converged = True
            report.iterations = it
            report.residual_inf = res.inf_norm
            report.residual_two = norm2
            report.wall_time_s = time.perf_counter() - start
            return traj, costates, report

    report.iterations = opts.max_iterations
    report.residual_inf = res.inf_norm
    report.residual_two = norm2
    report.wall_time_s = time.perf_counter() - start
    report.message = "iteration limit"
    raise NonConvergenceError("Newton iteration limit reached",
                              best=(best[0], best[1]), report=report)


class _FrozenOpponentDynamics(DynamicsModel):
    """Single-player view of a joint model with the other controls fixed."""

    def __init__(self, base, player, fixed_controls):
        self.base = base
        self.player = player
        self.fixed = fixed_controls  # list over players of (T-1, m_j)
        self.state_dim = base.state_dim
        self.control_dims = (base.control_dims[player],)

    def _full_controls(self, t, controls):
        full = [self.fixed[j][t] for j in range(len(self.fixed))]
        full[self.player] = controls[0]
        return full

    def step(self, t, x, controls):
        return self.base.step(t, x, self._full_controls(t, controls))

    def jac_x(self, t, x, controls):
        return self.base.jac_x(t, x, self._full_controls(t, controls))

    def jac_u(self, t, x, controls, player):
        return self.base.jac_u(t, x, self._full_controls(t, controls),
                               self.player)

    def hess_step_vec(self, t, x, controls, w, h=None):
        full = self._full_controls(t, controls)
        H = self.base.hess_step_vec(t, x, full, w)
        n = self.state_dim
        off = n + sum(self.base.control_dims[:self.player])
        m = self.base.control_dims[self.player]
        keep = np.concatenate([np.arange(n), np.arange(off, off + m)])
        return H[np.ix_(keep, keep)]


class _FrozenOpponentBasis(BasisFunction):
    def __init__(self, base, player, fixed_controls):
        self.base = base
        self.player = player
        self.fixed = fixed_controls
        self.uses_controls = base.uses_controls

    def _full(self, t, controls):
        if controls is None:
            return None
        full = [self.fixed[j][t] for j in range(len(self.fixed))]
        full[self.player] = controls[0]
        return full

    def value(self, t, x, controls):
        return self.base.value(t, x, self._full(t, controls))

    def grad_x(self, t, x, controls):
        return self.base.grad_x(t, x, self._full(t, controls))

    def grad_u(self, t, x, controls, player):
        return self.base.grad_u(t, x, self._full(t, controls), self.player)

    def hess_xx(self, t, x, controls):
        return self.base.hess_xx(t, x, self._full(t, controls))

    def hess_ux(self, t, x, controls, player):
        return self.base.hess_ux(t, x, self._full(t, controls), self.player)

    def hess_uu(self, t, x, controls, player_a, player_b):
        return self.base.hess_uu(t, x, self._full(t, controls),
                                 self.player, self.player)


def _single_player_view(game, player, opponent_controls):
    fixed = [np.asarray(u, dtype=float) for u in opponent_controls]
    dyn = _FrozenOpponentDynamics(game.dynamics, player, fixed)
    bases = tuple(_FrozenOpponentBasis(b, player, fixed)
                  for b in game.bases[player])
    return GameDefinition(
        num_players=1, horizon=game.horizon, state_dim=game.state_dim,
        control_dims=(game.control_dims[player],), dt=game.dt, dynamics=dyn,
        bases=(bases,), position_indices=(game.position_indices[player],),
        param_floor=game.param_floor, label=f"{game.label}:p{player}")


def solve_single_ocp(game, theta_i, player, opponent_controls, x1,
                     options=None, init=None):
    """Best response of one player with the opponents' controls frozen.

    Returns (controls, costates_i, report). The single-player stacked system
    is solved with the same Newton routine as the joint game.
    """
    theta_i = np.asarray(theta_i, dtype=float)
    view = _single_player_view(game, player, opponent_controls)
    params = CostParameters([theta_i])
    view_init = None
    if init is not None:
        traj0, u_i0, lam_i0 = init
        view_init = (Trajectory(traj0.states.copy(), [u_i0.copy()]),
                     Costates([lam_i0.copy()]))
    traj, costates, report = solve_olne_newton(view, params, x1,
                                               options=options,
                                               init=view_init)
    return traj.controls[0], costates.lams[0], report


def solve_olne_ibr(game, params, x1, options=None):
    """Iterated best response in fixed ascending player order.

    Sweeps until the largest control update falls below the tolerance, then
    refreshes the costates once more and verifies the stacked residual.
    Returns (trajectory, costates, report).
    """
    opts = options or ForwardSolveOptions()
    _check_params(game, params)
    start = time.perf_counter()
    x1 = np.asarray(x1, dtype=float)

    controls = [np.zeros((game.horizon - 1, m)) for m in game.control_dims]
    lams = [np.zeros((game.horizon - 1, game.state_dim))
            for _ in range(game.num_players)]
    traj = rollout(game, x1, controls)
    inner = replace(opts, residual_tolerance=max(opts.residual_tolerance,
                                                 1e-10))

    history = []
    report = SolveReport(num_variables=sum((game.horizon - 1) * m
                                           for m in game.control_dims))
    sweeps = 0
    for sweep in range(1, opts.ibr_max_sweeps + 1):
        sweeps = sweep
        max_change = 0.0
        for i in range(game.num_players):
            u_i, lam_i, _ = solve_single_ocp(
                game, params.weights[i], i, controls, x1, options=inner,
                init=(traj, controls[i], lams[i]))
            beta = opts.ibr_relaxation
            if beta != 1.0:
                u_i = (1.0 - beta) * controls[i] + beta * u_i
            max_change = max(max_change,
                             float(np.max(np.abs(u_i - controls[i]))))
            controls[i] = u_i
            lams[i] = lam_i
            traj = rollout(game, x1, controls)
        history.append(max_change)
        if max_change <= opts.ibr_tolerance:
            break
    else:
        report.iterations = sweeps
        report.wall_time_s = time.perf_counter() - start
        report.message = "sweep limit"
        raise NonConvergenceError(
            "best-response sweeps did not settle",
            best=(traj, Costates(lams)), report=report)

    # one costate refresh at the settled controls, then verify
    for i in range(game.num_players):
        _, lam_i, _ = solve_single_ocp(
            game, params.weights[i], i, controls, x1, options=inner,
            init=(traj, controls[i], lams[i]))
        lams[i] = lam_i
    costates = Costates(lams)
    res = assemble_G(game, traj, costates, params)
    report.iterations = sweeps
    report.residual_inf = res.inf_norm
    report.residual_two = res.two_norm
    report.residual_history = history
    report.wall_time_s = time.perf_counter() - start
    report.converged = res.inf_norm <= 1e-6
    if not report.converged:
        raise NonConvergenceError(
            "best-response fixed point fails the stacked residual check",
            best=(traj, costates), report=report)
    return traj, costates, report


def costate_warm_start(game, params, x1):
    """Zero-control rollout plus least-squares costates on the stationarity
    rows; a useful Newton initialization when the cold start stalls."""
    traj, costates = _default_start(game, x1)
    layout = VariableLayout.for_game(game)
    res = assemble_G(game, traj, costates, params)
    J = jacobian_G(game, traj, costates, params).tocsc()
    n_lam = game.num_players * (game.horizon - 1) * game.state_dim
    n_stat = res.layout.dynamics_offset
    A = J[:n_stat, layout.lam_offset:layout.lam_offset + n_lam].toarray()
    lam, *_ = np.linalg.lstsq(A, -res.vector[:n_stat], rcond=None)
    z = layout.pack(traj, costates)
    z[layout.lam_offset:layout.lam_offset + n_lam] = lam
    traj, costates, _ = layout.unpack(z)
    return traj, costates


def reference_equilibrium(game, params, x1, options=None):
    """Deterministic equilibrium solve used for ground truth generation and
    for re-solving at estimated weights.

    Tries, in order: Newton from the default start, Newton from a
    least-squares costate warm start, iterated best response (plain, then
    relaxed) with a Newton polish. The ladder is fixed, so results are
    reproducible.
    """
    opts = options or ForwardSolveOptions()
    try:
        return solve_olne_newton(game, params, x1, options=opts)
    except (NonConvergenceError, SingularSystemError):
        pass
    try:
        init = costate_warm_start(game, params, x1)
        return solve_olne_newton(game, params, x1, options=opts, init=init)
    except (NonConvergenceError, SingularSystemError):
        pass
    last_error = None
    for relaxation in (1.0, 0.5):
        try:
            traj, costates, report = solve_olne_ibr(
                game, params, x1,
                options=replace(opts, ibr_relaxation=relaxation))
        except (NonConvergenceError, SingularSystemError) as err:
            last_error = err
            continue
        try:
            return solve_olne_newton(game, params, x1, options=opts,
                                     init=(traj, costates))
        except (NonConvergenceError, SingularSystemError):
            return traj, costates, report
    raise NonConvergenceError("all forward solve strategies failed",
                              best=getattr(last_error, "best", None),
                              report=getattr(last_error, "report", None))
