"""Equality-constrained weighted least squares via Gauss-Newton SQP.

Minimizes f(z) = r(z)' W r(z) subject to c(z) = 0 and optional lower bounds
on a subset of coordinates. Steps come from the damped Gauss-Newton saddle
system; globalization is an exact l1 merit with Armijo backtracking. Bounds
are handled by a per-coordinate fraction-to-boundary clamp, with coordinates
that jam against the bound pinned and the subproblem re-solved, so one
active bound never freezes the whole step. Both the smoothing pre-solve and
the full inverse solve are instances of this problem.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .reports import NonConvergenceError, SingularSystemError, SolveReport

# constant dual regularization; keeps the saddle factorization stable for
# near-dependent constraint rows, and is corrected for by iterative
# refinement against the unshifted system
_DUAL_SHIFT = 1e-10

# a coordinate this close to the bound counts as sitting on it
_PIN_GAP = 1e-11

# predicted merit decreases below this relative size are invisible in
# double precision; see _merit_floor
_FLOOR_REL = 1e-12


@dataclass(frozen=True)
class GaussNewtonOptions:
    max_iterations: int = 200
    constraint_tolerance: float = 1e-6
    optimality_tolerance: float = 1e-6
    armijo: float = 1e-4
    backtrack_factor: float = 0.5
    min_step: float = 1e-10
    damping_init: float = 1e-6
    damping_min: float = 1e-9
    damping_max: float = 1e8
    penalty_init: float = 1.0
    boundary_fraction: float = 0.995
    max_rejections: int = 8


def _l1(v):
    return float(np.sum(np.abs(v)))


class _SaddleSolver:
    """One damped Gauss-Newton saddle solve, refined against the unshifted
    system so linearized constraints hold to machine precision."""

    def __init__(self, B, A, nz):
        self.B = B
        self.A = A.tocsr()
        self.m = A.shape[0]
        self.nz = nz
        K = sp.bmat([
            [B, self.A.T],
            [self.A, -_DUAL_SHIFT * sp.identity(self.m)],
        ], format="csc")
        self.lu = spla.splu(K)

    def solve(self, rhs):
        sol = self.lu.solve(rhs)
        for _ in range(2):
            resid = rhs - np.concatenate([
                self.B @ sol[:self.nz] + self.A.T @ sol[self.nz:],
                self.A @ sol[:self.nz]])
            sol = sol + self.lu.solve(resid)
        if not np.all(np.isfinite(sol)):
            raise RuntimeError("non-finite saddle solution")
        return sol[:self.nz], sol[self.nz:self.nz + self.m]


def solve_constrained_gauss_newton(z0, residuals, residual_jac, weights,
                                   constraints, constraint_jac, options=None,
                                   floor_index=None, floor_value=0.0):
    """Returns (z, multipliers, SolveReport).

    residuals/constraints are callables of the flat vector; the Jacobian
    callables must return scipy sparse matrices. Raises NonConvergenceError
    (carrying the best iterate) or SingularSystemError.
    """
    opts = options or GaussNewtonOptions()
    start = time.perf_counter()
    z = np.asarray(z0, dtype=float).copy()
    nz = len(z)
    w = np.asarray(weights, dtype=float)
    has_floor = floor_index is not None and len(floor_index) > 0
    if has_floor:
        floor_index = np.asarray(floor_index, dtype=int)
        z[floor_index] = np.maximum(z[floor_index], floor_value)

    nu = None
    mu = opts.penalty_init
    delta = opts.damping_init
    report = SolveReport(num_variables=nz)
    best = (np.inf, z.copy())
    rejections = 0
    stagnant = 0
    iterations = 0

    def finish(vec, multipliers, feas, c):
        report.converged = True
        report.iterations = iterations
        report.residual_inf = feas
        report.residual_two = float(np.linalg.norm(c))
        report.wall_time_s = time.perf_counter() - start
        return vec, multipliers, report

    for _ in range(opts.max_iterations):
        r = residuals(z)
        c = constraints(z)
        Jr = residual_jac(z)
        A = constraint_jac(z).tocsr()
        m = A.shape[0]
        if nu is None:
            nu = np.zeros(m)
        f = float(r @ (w * r))
        grad = 2.0 * (Jr.T @ (w * r))
        feas = float(np.max(np.abs(c))) if m else 0.0
        merit = f + mu * _l1(c)
        report.residual_history.append(feas)
        report.merit_history.append(merit)
        if merit < best[0]:
            best = (merit, z.copy())

        if feas <= opts.constraint_tolerance and \
                float(np.max(np.abs(grad + A.T @ nu))) \
                <= opts.optimality_tolerance:
            return finish(z, nu, feas, c)

        B = 2.0 * (Jr.T @ sp.diags(w) @ Jr)

        # step computation: damping ladder, with at-floor coordinates that
        # the step pushes outward pinned to zero motion and the subproblem
        # re-solved so the constraint linearization stays exact
        step = None
        nu_new = None
        D = 0.0
        stat_new = np.inf
        local_delta = delta
        pinned = []
        escalations = 0
        while escalations <= 16:
            if pinned:
                pins = sp.csr_matrix(
                    (np.ones(len(pinned)),
                     (np.arange(len(pinned)), np.array(pinned))),
                    shape=(len(pinned), nz))
                A_sub = sp.vstack([A, pins], format="csr")
                c_sub = np.concatenate([c, np.zeros(len(pinned))])
            else:
                A_sub = A
                c_sub = c
            try:
                saddle = _SaddleSolver(
                    B + local_delta * sp.identity(nz), A_sub, nz)
                cand, nu_full = saddle.solve(
                    np.concatenate([-grad, -c_sub]))
            except RuntimeError:
                local_delta = max(local_delta * 10.0, opts.damping_init)
                escalations += 1
                continue
            cand_nu = nu_full[:m]
            if has_floor:
                gap = z[floor_index] - floor_value
                jam = [int(j) for j, g, d in
                       zip(floor_index, gap, cand[floor_index])
                       if g <= _PIN_GAP and d < 0.0 and int(j) not in pinned]
                if jam:
                    pinned.extend(jam)
                    continue
                # fraction-to-boundary clamp for strictly interior ones
                lowest = -opts.boundary_fraction * np.maximum(gap, 0.0)
                clipped = np.maximum(cand[floor_index], lowest)
                if np.any(clipped != cand[floor_index]):
                    cand = cand.copy()
                    cand[floor_index] = clipped
            mu_req = 1.1 * float(np.max(np.abs(cand_nu), initial=0.0)) + 0.1
            cand_mu = max(mu, mu_req)
            if cand_mu > 5.0 * mu_req:
                # stale penalty from an earlier aggressive phase; relax it
                # so the constraint term stops crushing the line search
                cand_mu = max(opts.penalty_init, 2.0 * mu_req)
            c_lin = _l1(c + A @ cand)
            cand_D = float(grad @ cand) + cand_mu * (c_lin - _l1(c))
            stat_new = float(np.max(np.abs(grad + A.T @ cand_nu)))
            if cand_D < 0.0:
                step, nu_new, mu, D = cand, cand_nu, cand_mu, cand_D
                break
            if feas <= opts.constraint_tolerance and \
                    stat_new <= opts.optimality_tolerance:
                return finish(z, cand_nu, feas, c)
            local_delta = max(local_delta * 10.0, opts.damping_init)
            escalations += 1
        def at_numerical_floor():
            # nothing the merit function can resolve in double precision;
            # report convergence only for a feasible, near-stationary point
            if feas <= opts.constraint_tolerance and \
                    stat_new <= np.sqrt(opts.optimality_tolerance):
                report.message = "optimality at numerical merit precision"
                return True
            return False

        if step is None:
            if at_numerical_floor():
                return finish(z, nu, feas, c)
            report.iterations = iterations
            report.residual_inf = feas
            report.wall_time_s = time.perf_counter() - start
            report.message = "no descent direction"
            raise NonConvergenceError("no descent direction at the current "
                                      "iterate", best=best[1], report=report)
        delta = local_delta

        if feas <= opts.constraint_tolerance and \
                stat_new <= opts.optimality_tolerance:
            return finish(z, nu_new, feas, c)

        phi0 = f + mu * _l1(c)
        if abs(D) <= _FLOOR_REL * (1.0 + abs(phi0)):
            if at_numerical_floor():
                return finish(z, nu_new, feas, c)
            report.iterations = iterations
            report.residual_inf = feas
            report.wall_time_s = time.perf_counter() - start
            report.message = "merit floor before convergence"
            raise NonConvergenceError("merit progress exhausted before "
                                      "convergence", best=best[1],
                                      report=report)

        # below alpha_floor the Armijo decrease is smaller than the merit's
        # floating-point granularity, so searching further is meaningless
        alpha_floor = max(opts.min_step,
                          64.0 * np.finfo(float).eps * (1.0 + abs(phi0))
                          / abs(D))
        alpha = 1.0
        accepted = False
        while alpha >= alpha_floor:
            z_try = z + alpha * step
            if has_floor:
                z_try[floor_index] = np.maximum(z_try[floor_index],
                                                floor_value)
            r_try = residuals(z_try)
            c_try = constraints(z_try)
            phi = float(r_try @ (w * r_try)) + mu * _l1(c_try)
            if phi <= phi0 + opts.armijo * alpha * D:
                accepted = True
                break
            alpha *= opts.backtrack_factor

        if not accepted:
            if at_numerical_floor():
                return finish(z, nu_new, feas, c)
            rejections += 1
            delta = min(delta * 10.0, opts.damping_max)
            if rejections > opts.max_rejections:
                report.iterations = iterations
                report.residual_inf = feas
                report.wall_time_s = time.perf_counter() - start
                report.message = "merit line search stalled"
                raise NonConvergenceError("merit line search stalled",
                                          best=best[1], report=report)
            continue

        rejections = 0
        z = z + alpha * step
        if has_floor:
            z[floor_index] = np.maximum(z[floor_index], floor_value)
        nu = nu_new
        iterations += 1
        if phi0 - phi <= _FLOOR_REL * (1.0 + abs(phi0)):
            stagnant += 1
            if stagnant >= 3:
                if at_numerical_floor():
                    return finish(z, nu_new, feas, c)
                report.iterations = iterations
                report.residual_inf = feas
                report.wall_time_s = time.perf_counter() - start
                report.message = "stagnant merit"
                raise NonConvergenceError("merit progress stagnated before "
                                          "convergence", best=best[1],
                                          report=report)
        else:
            stagnant = 0
        if alpha >= 0.5:
            delta = max(delta / 5.0, opts.damping_min)

    report.iterations = iterations
    c = constraints(z)
    report.residual_inf = float(np.max(np.abs(c))) if len(c) else 0.0
    report.wall_time_s = time.perf_counter() - start
    report.message = "iteration limit"
    raise NonConvergenceError("Gauss-Newton iteration limit reached",
                              best=z.copy(), report=report)
