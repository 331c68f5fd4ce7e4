"""Legendre-Gauss-Lobatto pseudospectral transcription and NLP solver.

Discretises the steering problem on LGL nodes over [-1, 1] (physical time
t = (tau+1)*T/2), enforcing the dynamics and charge defects at every node
plus the boundary pins, and minimising the Gauss-Lobatto quadrature of the
power integral.  The resulting program is solved in-repo by an augmented
Lagrangian outer loop around a projected limited-memory quasi-Newton inner
solver, giving an independent check on the maximum-principle solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BarycentricInterpolator
from scipy.optimize import minimize

from .errors import NoConvergence
from .models import PhaseModel
from .numerics import TWO_PI


@dataclass(frozen=True, eq=False)
class CollocationGrid:
    """LGL nodes, quadrature weights, and the nodal differentiation matrix."""

    N: int
    nodes: np.ndarray
    weights: np.ndarray
    diff_matrix: np.ndarray


def _legendre_and_derivs(N, t):
    """L_N, L_N', L_N'' at points t via the three-term recurrence."""
    t = np.asarray(t, dtype=float)
    p_prev = np.ones_like(t)
    p = t.copy()
    for k in range(1, N):
        p_next = ((2 * k + 1) * t * p - k * p_prev) / (k + 1)
        p_prev, p = p, p_next
    if N == 0:
        p, p_prev = np.ones_like(t), np.zeros_like(t)
    dp = N * (t * p - p_prev) / (t * t - 1.0)
    ddp = (2.0 * t * dp - N * (N + 1) * p) / (1.0 - t * t)
    return p, dp, ddp


def lgl_grid(N: int) -> CollocationGrid:
    """Build the order-N LGL grid: endpoints plus the roots of L_N'.

    Interior roots come from Newton iteration started at Chebyshev-Lobatto
    points; weights are 2/(N(N+1))/L_N(t_i)^2 and the differentiation matrix
    follows the closed-form nodal expression.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    interior = -np.cos(np.pi * np.arange(1, N) / N)
    for _ in range(100):
        _, dp, ddp = _legendre_and_derivs(N, interior)
        step = dp / ddp
        interior = interior - step
        if np.max(np.abs(step)) < 1e-15:
            break
    nodes = np.concatenate(([-1.0], np.sort(interior), [1.0]))

    l_n = _legendre_nodes_value(N, nodes)
    weights = 2.0 / (N * (N + 1)) / l_n**2

    D = np.zeros((N + 1, N + 1))
    for j in range(N + 1):
        for k in range(N + 1):
            if j != k:
                D[j, k] = l_n[j] / (l_n[k] * (nodes[j] - nodes[k]))
    D[0, 0] = -N * (N + 1) / 4.0
    D[N, N] = N * (N + 1) / 4.0
    return CollocationGrid(N=N, nodes=nodes, weights=weights, diff_matrix=D)


def _legendre_nodes_value(N, t):
    p_prev = np.ones_like(t)
    p = np.asarray(t, dtype=float).copy()
    for k in range(1, N):
        p_next = ((2 * k + 1) * t * p - k * p_prev) / (k + 1)
        p_prev, p = p, p_next
    return p


@dataclass(frozen=True, eq=False)
class NlpProblem:
    """Transcribed program: decision vector [theta_bar, (p_bar), I_bar]."""

    model: PhaseModel
    target_T: float
    M: float
    charge_balanced: bool
    grid: CollocationGrid

    @property
    def n_nodes(self):
        return self.grid.N + 1

    @property
    def n_dec(self):
        blocks = 3 if self.charge_balanced else 2
        return blocks * self.n_nodes

    @property
    def n_cons(self):
        defects = 2 * self.n_nodes if self.charge_balanced else self.n_nodes
        pins = 4 if self.charge_balanced else 2
        return defects + pins

    def split(self, x):
        n = self.n_nodes
        theta = x[:n]
        if self.charge_balanced:
            return theta, x[n:2 * n], x[2 * n:]
        return theta, None, x[n:]

    def initial_guess(self):
        n = self.n_nodes
        theta = np.pi * (self.grid.nodes + 1.0)
        parts = [theta]
        if self.charge_balanced:
            parts.append(np.zeros(n))
        parts.append(np.zeros(n))
        return np.concatenate(parts)

    def bounds(self):
        # boundary pins are also enforced as fixed variables, which keeps the
        # penalty subproblems well behaved; the pin rows then sit at zero
        n = self.n_nodes
        free = [(None, None)] * n
        free[0] = (0.0, 0.0)
        free[-1] = (TWO_PI, TWO_PI)
        if self.charge_balanced:
            p_free = [(None, None)] * n
            p_free[0] = (0.0, 0.0)
            p_free[-1] = (0.0, 0.0)
            free = free + p_free
        box = [(-self.M, self.M) if np.isfinite(self.M) else (None, None)] * n
        return free + box

    @property
    def defect_scale(self):
        """Row weights for the defect constraints (summation-by-parts form);
        tempers the N^2 growth of the differentiation matrix in the penalty."""
        w = np.sqrt(self.grid.weights)
        if self.charge_balanced:
            return np.concatenate([w, w, np.ones(4)])
        return np.concatenate([w, np.ones(2)])

    def objective(self, x):
        _, _, current = self.split(x)
        return 0.5 * self.target_T * float(np.sum(current**2 * self.grid.weights))

    def objective_grad(self, x):
        _, _, current = self.split(x)
        g = np.zeros_like(x)
        g[-self.n_nodes:] = self.target_T * self.grid.weights * current
        return g

    def constraints(self, x):
        theta, p, current = self.split(x)
        D = self.grid.diff_matrix
        half_t = 0.5 * self.target_T
        f = self.model.f(theta)
        g = self.model.g(theta)
        rows = [D @ theta - half_t * (f + current * g)]
        if self.charge_balanced:
            rows.append(D @ p - half_t * current)
            pins = np.array([theta[0], theta[-1] - TWO_PI, p[0], p[-1]])
        else:
            pins = np.array([theta[0], theta[-1] - TWO_PI])
        rows.append(pins)
        return np.concatenate(rows)

    def al_value_and_grad(self, x, lam, rho, scale):
        """Augmented Lagrangian value and gradient, assembled blockwise so the
        dense constraint Jacobian never materialises in the inner loop."""
        theta, p, current = self.split(x)
        n = self.n_nodes
        D = self.grid.diff_matrix
        half_t = 0.5 * self.target_T
        f = self.model.f(theta)
        g = self.model.g(theta)
        c_dyn = D @ theta - half_t * (f + current * g)
        rows = [c_dyn]
        if self.charge_balanced:
            c_chg = D @ p - half_t * current
            rows.append(c_chg)
            pins = np.array([theta[0], theta[-1] - TWO_PI, p[0], p[-1]])
        else:
            c_chg = None
            pins = np.array([theta[0], theta[-1] - TWO_PI])
        rows.append(pins)
        c = scale * np.concatenate(rows)

        w = self.grid.weights
        value = half_t * float(np.sum(current**2 * w)) + float(lam @ c) + 0.5 * rho * float(c @ c)

        v = scale * (lam + rho * c)
        v_dyn = v[:n]
        fp = self.model.f_prime(theta)
        gp = self.model.g_prime(theta)
        grad_theta = D.T @ v_dyn - half_t * (fp + current * gp) * v_dyn
        grad_I = -half_t * g * v_dyn + self.target_T * w * current
        if self.charge_balanced:
            v_chg = v[n:2 * n]
            v_pin = v[2 * n:]
            grad_p = D.T @ v_chg
            grad_p[0] += v_pin[2]
            grad_p[-1] += v_pin[3]
            grad_I += -half_t * v_chg
            grad_theta[0] += v_pin[0]
            grad_theta[-1] += v_pin[1]
            grad = np.concatenate([grad_theta, grad_p, grad_I])
        else:
            v_pin = v[n:]
            grad_theta[0] += v_pin[0]
            grad_theta[-1] += v_pin[1]
            grad = np.concatenate([grad_theta, grad_I])
        return value, grad

    def constraints_jac(self, x):
        theta, p, current = self.split(x)
        n = self.n_nodes
        D = self.grid.diff_matrix
        half_t = 0.5 * self.target_T
        jac = np.zeros((self.n_cons, self.n_dec))
        fp = self.model.f_prime(theta)
        gp = self.model.g_prime(theta)
        g = self.model.g(theta)
        jac[:n, :n] = D - np.diag(half_t * (fp + current * gp))
        jac[:n, -n:] = -half_t * np.diag(g)
        if self.charge_balanced:
            jac[n:2 * n, n:2 * n] = D
            jac[n:2 * n, -n:] = -half_t * np.eye(n)
            base = 2 * n
            jac[base, 0] = 1.0
            jac[base + 1, n - 1] = 1.0
            jac[base + 2, n] = 1.0
            jac[base + 3, 2 * n - 1] = 1.0
        else:
            base = n
            jac[base, 0] = 1.0
            jac[base + 1, n - 1] = 1.0
        return jac


def assemble_nlp(model: PhaseModel, target_T: float, M: float,
                 charge_balanced: bool, grid: CollocationGrid) -> NlpProblem:
    """Exact transcription of the steering problem on the given grid."""
    if not target_T > 0:
        raise ValueError("target_T must be positive")
    return NlpProblem(model=model, target_T=target_T, M=M,
                      charge_balanced=charge_balanced, grid=grid)


@dataclass(frozen=True, eq=False)
class NlpResult:
    x: np.ndarray
    theta: np.ndarray
    p: np.ndarray | None
    control: np.ndarray
    objective: float
    kkt_stationarity: float
    constraint_violation: float
    multipliers: np.ndarray
    converged: bool
    outer_rounds: int


def _kkt_residuals(problem, x, bounds):
    """Scaled KKT stationarity with least-squares equality multipliers.

    Variables sitting on a bound contribute only the sign-violating part of
    the Lagrangian gradient (their bound multiplier absorbs the rest).
    Returns (stationarity, multipliers).
    """
    g0 = problem.objective_grad(x)
    jac = problem.constraints_jac(x)
    lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds])
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds])
    span = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
    at_lo = x - lo <= 1e-10 * (1.0 + np.abs(span))
    at_hi = hi - x <= 1e-10 * (1.0 + np.abs(span))
    inactive = ~(at_lo | at_hi)
    lam, *_ = np.linalg.lstsq(jac[:, inactive].T, -g0[inactive], rcond=None)
    r = g0 + jac.T @ lam
    res = float(np.max(np.abs(r[inactive]))) if np.any(inactive) else 0.0
    # at an upper bound the reduced gradient must not point inward (and
    # symmetrically at a lower bound); only sign violations count
    fixed = at_lo & at_hi
    res = max(res, float(np.max(np.maximum(0.0, r[at_hi & ~fixed]), initial=0.0)))
    res = max(res, float(np.max(np.maximum(0.0, -r[at_lo & ~fixed]), initial=0.0)))
    return res / (1.0 + float(np.max(np.abs(lam), initial=0.0))), lam


def solve_nlp(problem: NlpProblem, initial_guess=None,
              outer_rounds: int = 8, rho0: float = 10.0,
              tol: float = 1e-7, inner_maxiter: int = 4000) -> NlpResult:
    """Augmented Lagrangian solve with bound projection.

    Penalty starts at ``rho0`` and grows tenfold whenever a round fails to
    cut the constraint violation to a quarter; the inner bound-constrained
    subproblems go to L-BFGS-B with the analytic gradient.  Declared
    converged when both the scaled KKT stationarity and the constraint
    violation fall below ``tol``.
    """
    x = problem.initial_guess() if initial_guess is None else np.asarray(initial_guess, float).copy()
    bounds = problem.bounds()
    scale = problem.defect_scale

    def cons_scaled(z):
        return scale * problem.constraints(z)

    lam = np.zeros(problem.n_cons)
    rho = rho0
    prev_viol = np.inf
    stat = viol = np.inf
    multipliers = lam
    rounds = 0

    for rounds in range(1, outer_rounds + 1):
        res = minimize(
            lambda z, lam=lam, rho=rho: problem.al_value_and_grad(z, lam, rho, scale),
            x, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": inner_maxiter, "maxfun": 20 * inner_maxiter,
                     "maxcor": 30, "ftol": 1e-16, "gtol": 1e-12},
        )
        x = res.x
        c = cons_scaled(x)
        viol = float(np.max(np.abs(c)))
        stat, multipliers = _kkt_residuals(problem, x, bounds)
        if viol <= tol and stat <= tol:
            lam = lam + rho * c
            break
        lam = lam + rho * c
        if viol > 0.25 * prev_viol:
            rho *= 10.0
        prev_viol = viol

    theta, p, current = problem.split(x)
    converged = viol <= tol and stat <= tol
    result = NlpResult(
        x=x, theta=theta.copy(), p=None if p is None else p.copy(),
        control=current.copy(), objective=problem.objective(x),
        kkt_stationarity=stat, constraint_violation=viol,
        multipliers=multipliers, converged=converged, outer_rounds=rounds,
    )
    if not converged:
        raise NoConvergence(
            f"augmented Lagrangian stalled: violation {viol:.3e}, stationarity {stat:.3e}",
            best=result, residual=max(viol, stat),
        )
    return result


def nodal_interpolant(grid: CollocationGrid, values):
    """Stable (barycentric) polynomial through nodal values on [-1, 1]."""
    return BarycentricInterpolator(grid.nodes, np.asarray(values, dtype=float))


def guess_from_control(problem: NlpProblem, control) -> np.ndarray:
    """Warm-start vector sampled from an indirect ControlSolution."""
    t_nodes = 0.5 * (problem.grid.nodes + 1.0) * problem.target_T
    theta = np.interp(t_nodes, control.times, control.theta_of_t)
    current = np.array([control.control_fn(t) for t in t_nodes])
    parts = [theta]
    if problem.charge_balanced:
        parts.append(np.interp(t_nodes, control.times, control.charge_of_t))
    parts.append(current)
    return np.concatenate(parts)
