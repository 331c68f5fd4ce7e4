"""Minimum-power extremal controls with unconstrained amplitude.

The maximum principle reduces the steering problem to two constants: c, the
conserved Hamiltonian value, and mu, the multiplier of the charge constraint.
Along an extremal the phase velocity is sqrt(f^2 - g*mu*f - g^2*c), and the
control follows in closed form from (c, mu).  This module evaluates those
expressions stably, solves the two integral equations that pin (c, mu) to a
prescribed spiking time, and packages the result with independent forward
integration of the phase dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import (
    Infeasible,
    InfeasibleParams,
    InfeasiblePhase,
    NearZeroPrc,
    NoConvergence,
    SingularJacobian,
)
from .models import PhaseModel
from .numerics import (
    TWO_PI,
    OdeConfig,
    QuadratureSpec,
    RootFindConfig,
    find_root_2d,
    integrate_ode,
    integrate_periodic,
)

_FEAS_GRID = np.linspace(0.0, TWO_PI, 4097)[:-1]
_SYM_GRID = np.linspace(0.0, TWO_PI, 513)[:-1]

# below this fraction of max|g| the g-denominator forms are replaced by the
# cancellation-free conjugate expression
_EPS_G_FRACTION = 1e-6


@dataclass(frozen=True)
class ExtremalParams:
    """Constants (c, mu) that fully determine a normal extremal (lambda0 = 1)."""

    c: float
    mu: float
    charge_balanced: bool
    lambda0: float = 1.0


@dataclass(frozen=True, eq=False)
class ControlSolution:
    """Synthesised stimulus with phase samples, time samples, and audit metrics."""

    target_T: float
    achieved_T: float
    cost: float
    net_charge: float
    theta_grid: np.ndarray
    control_theta: np.ndarray
    times: np.ndarray
    theta_of_t: np.ndarray
    control_of_t: np.ndarray
    charge_of_t: np.ndarray
    arcs: tuple
    switch_phases: tuple
    control_fn: Callable  # I as a function of time on [0, achieved_T]


@dataclass(frozen=True, eq=False)
class ExtremalSolution:
    params: ExtremalParams
    target_T: float
    achieved_T: float
    cost: float
    net_charge: float
    control: ControlSolution


def feasibility_margin(model: PhaseModel, c: float, mu: float) -> float:
    """Smallest value of f^2 - g*mu*f - g^2*c on the 4096-point check grid."""
    f = model.f(_FEAS_GRID)
    g = model.g(_FEAS_GRID)
    return float(np.min(f * f - g * mu * f - g * g * c))


def _feasibility_floor(model: PhaseModel) -> float:
    return 1e-9 * model.velocity_scale**2


def require_feasible(model: PhaseModel, c: float, mu: float) -> None:
    if feasibility_margin(model, c, mu) < _feasibility_floor(model):
        raise InfeasibleParams(
            f"(c={c:.6g}, mu={mu:.6g}) leaves no positive phase velocity"
        )


def _radicand(model, c, mu, theta):
    f = model.f(theta)
    g = model.g(theta)
    return f, g, f * f - g * mu * f - g * g * c


def phase_velocity(model: PhaseModel, params: ExtremalParams, theta):
    """d(theta)/dt along the extremal: the positive square root branch."""
    theta = np.asarray(theta, dtype=float)
    _, _, rad = _radicand(model, params.c, params.mu, theta)
    if np.any(rad < 0):
        raise InfeasiblePhase("negative radicand: extremal undefined at this phase")
    return np.sqrt(rad)


def _control_arrays(model, c, mu, theta):
    """Vectorised optimal control (-f + sqrt(rad))/g with the removable g->0
    singularity evaluated through the algebraically equivalent conjugate form
    -(mu*f + g*c)/(sqrt(rad) + f), which is cancellation-free wherever f > 0."""
    theta = np.asarray(theta, dtype=float)
    f, g, rad = _radicand(model, c, mu, theta)
    if np.any(rad < 0):
        raise InfeasiblePhase("negative radicand: extremal undefined at this phase")
    s = np.sqrt(rad)
    eps_g = _EPS_G_FRACTION * max(model.g_max, 1e-300)
    pos_f = f > 0
    if np.any(~pos_f & (np.abs(g) < eps_g)):
        raise InfeasiblePhase("phase cannot advance where f <= 0 and g vanishes")
    conj = -(mu * f + g * c) / np.where(pos_f, s + f, 1.0)
    direct = (s - f) / np.where(np.abs(g) < eps_g, 1.0, g)
    return np.where(pos_f, conj, direct)


def eval_unbounded_control(model: PhaseModel, params: ExtremalParams, theta):
    """Optimal unconstrained-amplitude control I*(theta) for the given constants."""
    out = _control_arrays(model, params.c, params.mu, theta)
    return float(out) if np.ndim(theta) == 0 else out


def eval_costate(model: PhaseModel, params: ExtremalParams, theta):
    """Costate lambda(theta) on the negative square-root branch.

    Requires |g| above the near-zero-PRC floor; the g^2 denominator is removed
    analytically (conjugate form) so no accuracy is lost at moderate |g|.
    """
    theta = np.asarray(theta, dtype=float)
    c, mu = params.c, params.mu
    f, g, rad = _radicand(model, c, mu, theta)
    if np.any(rad < 0):
        raise InfeasiblePhase("negative radicand: extremal undefined at this phase")
    eps_g = _EPS_G_FRACTION * max(model.g_max, 1e-300)
    if np.any(np.abs(g) < eps_g):
        raise NearZeroPrc("costate is singular where the PRC vanishes")
    s = np.sqrt(rad)
    pos_f = f > 0
    stable = (mu * (mu * f + g * c) + 2.0 * c * (f + s)) / np.where(pos_f, (f + s) ** 2, 1.0)
    direct = (-mu * g + 2.0 * f - 2.0 * s) / (g * g)
    out = np.where(pos_f, stable, direct)
    return float(out) if np.ndim(theta) == 0 else out


def spiking_time(model: PhaseModel, params: ExtremalParams, quad: QuadratureSpec | None = None) -> float:
    """Time for one full cycle under I*: integral of 1/phase_velocity."""
    require_feasible(model, params.c, params.mu)
    c, mu = params.c, params.mu

    def integrand(th):
        _, _, rad = _radicand(model, c, mu, th)
        return 1.0 / np.sqrt(rad)

    return integrate_periodic(integrand, quad)


def net_charge(model: PhaseModel, params: ExtremalParams, quad: QuadratureSpec | None = None) -> float:
    """Charge delivered over one cycle: integral of I*/phase_velocity."""
    require_feasible(model, params.c, params.mu)
    c, mu = params.c, params.mu

    def integrand(th):
        _, _, rad = _radicand(model, c, mu, th)
        return _control_arrays(model, c, mu, th) / np.sqrt(rad)

    return integrate_periodic(integrand, quad)


def is_charge_symmetric(model: PhaseModel) -> bool:
    """True when f is even and g odd about theta = pi, so that I* is
    anti-symmetric and the charge constraint holds automatically with mu = 0."""
    f = model.f(_SYM_GRID)
    g = model.g(_SYM_GRID)
    f_ref = model.f(TWO_PI - _SYM_GRID)
    g_ref = model.g(TWO_PI - _SYM_GRID)
    g_scale = max(model.g_max, 1e-300)
    return bool(
        np.max(np.abs(f - f_ref)) <= 1e-9 * model.f_scale
        and np.max(np.abs(g + g_ref)) <= 1e-9 * g_scale
    )


def _c_upper_bound(model: PhaseModel) -> float:
    """Least upper bound on c (at mu = 0): min over the cycle of (f/g)^2."""
    grid = np.linspace(0.0, TWO_PI, 8193)[:-1]
    f = model.f(grid)
    g = model.g(grid)
    floor = 1e-9 * max(model.g_max, 1e-300)
    ratio = np.where(np.abs(g) > floor, (f / np.where(np.abs(g) > floor, g, 1.0)) ** 2, np.inf)
    i = int(np.argmin(ratio))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]

    def h(th):
        gv = model.g(th)
        if abs(gv) <= floor:
            return np.inf
        return float((model.f(th) / gv) ** 2)

    from scipy.optimize import minimize_scalar

    res = minimize_scalar(h, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return min(float(ratio[i]), float(res.fun))


def _time_at(model, c, mu, quad):
    try:
        return spiking_time(model, ExtremalParams(c, mu, False), quad)
    except InfeasibleParams:
        return None


def _solve_c_for_time(model: PhaseModel, target_T: float, mu: float,
                      quad: QuadratureSpec | None) -> float:
    """Scalar solve of spiking_time(c; mu) = target_T.  The map is strictly
    increasing in c, so an expanding bracket plus Brent is globally reliable."""
    c_max = _c_upper_bound(model)
    span = max(model.velocity_scale**2, 0.25 * abs(c_max), 1e-6)

    c_hi = None
    t_hi = None
    for k in range(0, 60):
        c_try = c_max - span * 4.0 ** (-k)
        t_try = _time_at(model, c_try, mu, quad)
        if t_try is None:
            break
        c_hi, t_hi = c_try, t_try
        if t_try >= target_T:
            break
    if c_hi is None or t_hi < target_T:
        raise Infeasible(
            f"spiking time {target_T:.6g} exceeds what the feasibility margin allows"
        )

    c_lo = None
    for k in range(0, 60):
        c_try = c_max - span * 4.0**k
        t_try = _time_at(model, c_try, mu, quad)
        if t_try is not None and t_try <= target_T:
            c_lo = c_try
            break
    if c_lo is None:
        raise Infeasible(f"no feasible c reaches spiking time {target_T:.6g}")
    if c_lo == c_hi:
        return c_lo

    return brentq(
        lambda c: _time_at(model, c, mu, quad) - target_T,
        c_lo, c_hi, xtol=1e-14 * (1.0 + abs(c_lo) + abs(c_hi)), rtol=8.9e-16,
        maxiter=200,
    )


def _newton_2d(model, target_T, x0, quad, cfg):
    i_scale = max(float(np.max(np.abs(_control_arrays(model, x0[0], x0[1], _SYM_GRID)))),
                  1e-6 * model.velocity_scale / max(model.g_max, 1e-300))
    q_scale = i_scale * target_T

    def residual(x):
        c, mu = float(x[0]), float(x[1])
        p = ExtremalParams(c, mu, True)
        return np.array([
            (spiking_time(model, p, quad) - target_T) / target_T,
            net_charge(model, p, quad) / q_scale,
        ])

    return find_root_2d(residual, x0, cfg)


def solve_extremal(model: PhaseModel, target_T: float, charge_balanced: bool = True,
                   quad: QuadratureSpec | None = None,
                   root: RootFindConfig | None = None,
                   ode: OdeConfig | None = None) -> ExtremalSolution:
    """Find (c, mu) for the prescribed spiking time and build the full solution.

    Without the charge constraint (or when symmetry fulfils it automatically)
    mu is exactly 0 and the scalar time equation is solved by bracketing.
    Otherwise a damped Newton iteration solves the (time, charge) pair, with
    a continuation ladder of intermediate targets as fallback for far targets.
    """
    if not target_T > 0:
        raise Infeasible("target spiking time must be positive")
    if model.g_max <= 0.0:
        raise Infeasible("model is uncontrollable: g vanishes identically")
    root = root or RootFindConfig()

    symmetric = is_charge_symmetric(model)
    if not charge_balanced or symmetric:
        c = _solve_c_for_time(model, target_T, 0.0, quad)
        params = ExtremalParams(c, 0.0, charge_balanced)
    else:
        c1 = _solve_c_for_time(model, target_T, 0.0, quad)
        x0 = np.array([c1, 0.0])
        try:
            x = _newton_2d(model, target_T, x0, quad, root)
        except (NoConvergence, SingularJacobian, InfeasibleParams):
            x = _continuation_2d(model, target_T, quad, root)
        params = ExtremalParams(float(x[0]), float(x[1]), True)

    control = build_control_solution(
        model,
        lambda th: _control_arrays(model, params.c, params.mu, th),
        target_T,
        ode=ode,
    )
    return ExtremalSolution(
        params=params,
        target_T=target_T,
        achieved_T=control.achieved_T,
        cost=control.cost,
        net_charge=control.net_charge,
        control=control,
    )


def _continuation_2d(model, target_T, quad, cfg):
    """Ladder of intermediate targets, warm-starting (c, mu) at each rung."""
    if model.autonomous:
        anchor = integrate_periodic(lambda th: 1.0 / model.f(th), quad)
        x = np.array([0.0, 0.0])
    else:
        c_max = _c_upper_bound(model)
        c_a = c_max - max(model.velocity_scale**2, 1e-6)
        anchor = _time_at(model, c_a, 0.0, quad)
        if anchor is None:
            raise Infeasible("no feasible anchor for continuation")
        x = np.array([c_a, 0.0])

    n = max(2, int(np.ceil(abs(np.log(target_T / anchor)) / np.log(1.2))))
    for t_k in np.geomspace(anchor, target_T, n + 1)[1:]:
        x = _newton_2d(model, t_k, x, quad, cfg)
    return x


def build_control_solution(model: PhaseModel, control_of_theta, target_T: float,
                           arcs: tuple = ((0.0, TWO_PI, "interior"),),
                           switch_phases: tuple = (),
                           ode: OdeConfig | None = None,
                           n_time_samples: int = 2049,
                           n_theta_samples: int = 2049) -> ControlSolution:
    """Audit a phase-parameterised control by forward integration of the
    phase dynamics, returning dense time samples and cost/charge totals."""
    ode = ode or OdeConfig(rel_tol=1e-10, abs_tol=1e-12, dense_output=True)
    if not ode.dense_output:
        ode = OdeConfig(ode.rel_tol, ode.abs_tol, ode.max_step, True)

    def rhs(t, y):
        th = y[0]
        current = float(control_of_theta(th))
        return [float(model.f(th)) + float(model.g(th)) * current, current, current * current]

    def reach(t, y):
        return y[0] - TWO_PI
    reach.terminal = True
    reach.direction = 1

    horizon = 4.0 * target_T
    sol = integrate_ode(rhs, [0.0, 0.0, 0.0], (0.0, horizon), ode, events=reach)
    if sol.t_events[0].size == 0:
        raise NoConvergence("forward trajectory never reached 2*pi")
    achieved_T = float(sol.t_events[0][0])
    end_state = sol.sol(achieved_T)
    times = np.linspace(0.0, achieved_T, n_time_samples)
    states = sol.sol(times)
    theta_of_t = states[0]
    charge_of_t = states[1]
    control_of_t = np.array([float(control_of_theta(th)) for th in theta_of_t])

    theta_grid = np.linspace(0.0, TWO_PI, n_theta_samples)
    control_theta = np.array([float(control_of_theta(th)) for th in theta_grid])

    dense = sol.sol

    def control_fn(t):
        t_clamped = min(max(float(t), 0.0), achieved_T)
        return float(control_of_theta(dense(t_clamped)[0]))

    return ControlSolution(
        target_T=target_T,
        achieved_T=achieved_T,
        cost=float(end_state[2]),
        net_charge=float(end_state[1]),
        theta_grid=theta_grid,
        control_theta=control_theta,
        times=times,
        theta_of_t=theta_of_t,
        control_of_t=control_of_t,
        charge_of_t=charge_of_t,
        arcs=tuple(arcs),
        switch_phases=tuple(switch_phases),
        control_fn=control_fn,
    )
