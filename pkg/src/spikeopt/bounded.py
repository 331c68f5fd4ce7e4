"""Amplitude-bounded optimal spiking controls.

With |I| <= M the optimal stimulus clips the unconstrained extremal at the
bound: interior arcs follow I*(theta), bang arcs pin the control at +/-M
wherever |I*| would exceed M.  The same two constants (c, mu) remain the
unknowns; switch phases are re-detected inside every residual evaluation, so
one code path serves every PRC shape.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import (
    BadParameter,
    BangInfeasible,
    Infeasible,
    InfeasibleParams,
    NoConvergence,
    NoSwitching,
    OutOfRange,
    SingularJacobian,
)
from .extremal import (
    ControlSolution,
    ExtremalParams,
    _c_upper_bound,
    _control_arrays,
    _radicand,
    build_control_solution,
    is_charge_symmetric,
    solve_extremal,
)
from .models import PhaseModel
from .numerics import (
    TWO_PI,
    OdeConfig,
    QuadratureSpec,
    RootFindConfig,
    find_root_2d,
    integrate_segment,
)

log = logging.getLogger(__name__)

_SCAN = np.linspace(0.0, TWO_PI, 4097)[:-1]


@dataclass(frozen=True)
class FeasibleRange:
    """Spiking times reachable under |I| <= M, with the pure-I* sub-range."""

    M: float
    T_min_M: float
    T_max_M: float  # may be +inf
    T_Istar_min: float
    T_Istar_max: float  # may be +inf


@dataclass(frozen=True, eq=False)
class BoundedPolicy:
    """Arc decomposition of a bounded optimal control over one cycle."""

    M: float
    params: ExtremalParams
    arcs: tuple  # ordered (theta_start, theta_end, kind) covering [0, 2*pi)
    switch_phases: tuple


def _g_sign_segments(model: PhaseModel):
    """Partition [0, 2*pi) at sign changes of g; returns (a, b, sign) triples."""
    g = model.g(_SCAN)
    floor = 1e-12 * max(model.g_max, 1e-300)
    crossings = []
    n = _SCAN.size
    for i in range(n):
        a, b = g[i], g[(i + 1) % n]
        if a * b < 0:
            lo = _SCAN[i]
            hi = _SCAN[i] + (TWO_PI / n)
            crossings.append(brentq(lambda th: float(model.g(th)), lo, hi, xtol=1e-13))
    if not crossings:
        sign = 1.0 if float(np.max(g)) > floor else -1.0
        return [(0.0, TWO_PI, sign)]
    pts = sorted(crossings)
    edges = [0.0] + pts + [TWO_PI]
    segments = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a < 1e-12:
            continue
        mid = 0.5 * (a + b)
        segments.append((a, b, 1.0 if float(model.g(mid)) >= 0 else -1.0))
    return segments


def _bang_time(model: PhaseModel, signed_M: float, quad) -> float:
    """Cycle time under I = signed_M*sign(g): the extreme spiking times."""
    total = 0.0
    for a, b, sign in _g_sign_segments(model):
        current = signed_M * sign

        def integrand(th):
            v = model.f(th) + model.g(th) * current
            if np.any(v <= 0):
                raise BangInfeasible(
                    "bang control leaves a non-positive phase velocity"
                )
            return 1.0 / v

        total += integrate_segment(integrand, a, b, quad)
    return total


def bang_min_time(model: PhaseModel, M: float, quad: QuadratureSpec | None = None) -> float:
    """Shortest spiking time under |I| <= M: full bang with the sign of g."""
    if not M > 0:
        raise BadParameter("bound M must be positive")
    return _bang_time(model, M, quad)


def min_abs_ratio(model: PhaseModel) -> float:
    """min over the cycle of |f(theta)/g(theta)|: the bound at which the
    phase can be stalled and arbitrarily long spiking times open up."""
    grid = np.linspace(0.0, TWO_PI, 8193)[:-1]
    f = model.f(grid)
    g = model.g(grid)
    floor = 1e-9 * max(model.g_max, 1e-300)
    ok = np.abs(g) > floor
    ratio = np.where(ok, np.abs(f) / np.where(ok, np.abs(g), 1.0), np.inf)
    i = int(np.argmin(ratio))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]

    def h(th):
        gv = float(model.g(th))
        if abs(gv) <= floor:
            return np.inf
        return abs(float(model.f(th))) / abs(gv)

    res = minimize_scalar(h, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    return min(float(ratio[i]), float(res.fun))


def bang_max_time(model: PhaseModel, M: float, quad: QuadratureSpec | None = None) -> float:
    """Longest spiking time under |I| <= M; +inf once M can stall the phase."""
    if not M > 0:
        raise BadParameter("bound M must be positive")
    if M >= min_abs_ratio(model) * (1.0 - 1e-12):
        return np.inf
    return _bang_time(model, -M, quad)


def _unclipped_max(model, c, mu):
    """max over the cycle of |I*|, treating stalled zones as their -f/g limit."""
    u = _extended_control(model, c, mu, _SCAN)
    return float(np.max(np.abs(u)))


def _extended_control(model, c, mu, theta):
    """I*(theta) continued through negative-radicand zones by its stall limit
    -f/g (the two expressions agree where the radicand vanishes)."""
    theta = np.asarray(theta, dtype=float)
    f, g, rad = _radicand(model, c, mu, theta)
    eps_g = 1e-9 * max(model.g_max, 1e-300)
    stalled = rad <= 0
    if np.any(stalled & (np.abs(g) < eps_g)):
        raise InfeasibleParams("phase stalls where the PRC has no authority")
    safe_g = np.where(np.abs(g) < eps_g, 1.0, g)
    limit = -f / safe_g
    s = np.sqrt(np.maximum(rad, 0.0))
    pos_f = f > 0
    conj = -(mu * f + g * c) / np.where(pos_f, s + f, 1.0)
    direct = (s - f) / safe_g
    interior = np.where(pos_f, conj, direct)
    return np.where(stalled, limit, interior)


def clipped_control_values(model: PhaseModel, params: ExtremalParams, M: float, theta):
    """The bounded optimal control: I* clipped to [-M, M] pointwise."""
    u = _extended_control(model, params.c, params.mu, theta)
    theta = np.asarray(theta, dtype=float)
    _, _, rad = _radicand(model, params.c, params.mu, theta)
    if np.any((rad <= 0) & (np.abs(u) <= M)):
        raise InfeasibleParams("stalled zone inside an interior arc")
    out = np.clip(u, -M, M)
    return float(out) if np.ndim(theta) == 0 else out


def _detect_switches(model, c, mu, M):
    """Phases where |I*| crosses M, refined by bisection to ~1e-12 rad."""
    u = _extended_control(model, c, mu, _SCAN)
    n = _SCAN.size
    step = TWO_PI / n
    switches = []
    for level in (M, -M):
        h = u - level
        for i in range(n):
            a, b = h[i], h[(i + 1) % n]
            if a == 0.0:
                switches.append(_SCAN[i])
            elif a * b < 0:
                root = brentq(
                    lambda th: float(_extended_control(model, c, mu, np.atleast_1d(th))[0]) - level,
                    _SCAN[i], _SCAN[i] + step, xtol=1e-13,
                )
                switches.append(root % TWO_PI)
    switches = sorted(set(np.round(switches, 12)))
    return switches


def _build_arcs(model, c, mu, M):
    """Arc decomposition (start, end, kind) from the detected switch phases."""
    switches = _detect_switches(model, c, mu, M)
    if not switches:
        return [(0.0, TWO_PI, "interior")], []

    def kind_at(th):
        v = float(_extended_control(model, c, mu, np.atleast_1d(th))[0])
        if v > M:
            return "plus_bang"
        if v < -M:
            return "minus_bang"
        return "interior"

    edges = [0.0] + [s for s in switches if 1e-12 < s < TWO_PI - 1e-12] + [TWO_PI]
    arcs = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 1e-12:
            continue
        arcs.append((a, b, kind_at(0.5 * (a + b))))
    if len(switches) > 4:
        log.warning("detected %d switch phases; more than the four the "
                    "classified regimes predict", len(switches))
    return arcs, switches


def _clipped_integrals(model, c, mu, M, quad):
    """(cycle time, net charge) under the clipped control for given (c, mu)."""
    arcs, _ = _build_arcs(model, c, mu, M)
    t_total = 0.0
    q_total = 0.0
    for a, b, kind in arcs:
        if kind == "interior":
            def t_int(th):
                _, _, rad = _radicand(model, c, mu, th)
                if np.any(rad <= 0):
                    raise InfeasibleParams("stall inside an interior arc")
                return 1.0 / np.sqrt(rad)

            def q_int(th):
                _, _, rad = _radicand(model, c, mu, th)
                if np.any(rad <= 0):
                    raise InfeasibleParams("stall inside an interior arc")
                return _control_arrays(model, c, mu, th) / np.sqrt(rad)
        else:
            current = M if kind == "plus_bang" else -M

            def t_int(th, current=current):
                v = model.f(th) + model.g(th) * current
                if np.any(v <= 0):
                    raise InfeasibleParams("bang arc has non-positive velocity")
                return 1.0 / v

            def q_int(th, current=current):
                v = model.f(th) + model.g(th) * current
                if np.any(v <= 0):
                    raise InfeasibleParams("bang arc has non-positive velocity")
                return current / v
        t_total += integrate_segment(t_int, a, b, quad)
        q_total += integrate_segment(q_int, a, b, quad)
    return t_total, q_total


def istar_time_range(model: PhaseModel, M: float, charge_balanced: bool = True,
                     quad: QuadratureSpec | None = None):
    """Spiking-time window coverable by the pure (unclipped) extremal control.

    The sinusoidal model admits the closed-form elliptic integrals obtained by
    substituting the tangency constant; other models locate the tangency by
    bisection over the extremal family.
    """
    if not M > 0:
        raise BadParameter("bound M must be positive")
    if model.kind == "sinusoidal":
        omega = model.params["omega"]
        z = model.params["z_d"]
        b_fast = z * M * (z * M + 2.0 * omega)

        def fast(th):
            return 1.0 / np.sqrt(omega**2 + b_fast * np.sin(th) ** 2)

        t_min = integrate_segment(fast, 0.0, TWO_PI, quad)
        if M >= omega / abs(z):
            return t_min, np.inf
        b_slow = z * M * (z * M - 2.0 * omega)

        def slow(th):
            return 1.0 / np.sqrt(omega**2 + b_slow * np.sin(th) ** 2)

        return t_min, integrate_segment(slow, 0.0, TWO_PI, quad)
    return (_istar_boundary(model, M, charge_balanced, "fast", quad),
            _istar_boundary(model, M, charge_balanced, "slow", quad))


def _unclipped_peak_at(model, T, charge_balanced, quad):
    sol = solve_extremal(model, T, charge_balanced, quad=quad)
    return _unclipped_max(model, sol.params.c, sol.params.mu)


def _istar_boundary(model, M, charge_balanced, side, quad):
    if model.autonomous:
        anchor = TWO_PI / model.omega
    else:
        anchor = bang_min_time(model, M, quad) * 4.0
        if _unclipped_peak_at(model, anchor, charge_balanced, quad) > M:
            anchor = None
    if side == "fast":
        lo = bang_min_time(model, M, quad)
        hi = anchor if anchor is not None else None
        if hi is None:
            raise Infeasible("no anchor time with |I*| <= M")
        t_a, t_b = lo * (1.0 + 1e-9), hi
    else:
        t_max = bang_max_time(model, M, quad)
        start = anchor if anchor is not None else bang_min_time(model, M, quad) * 2.0
        if np.isinf(t_max):
            t_probe = start
            for _ in range(14):
                t_next = t_probe * 2.0
                try:
                    peak = _unclipped_peak_at(model, t_next, charge_balanced, quad)
                except Infeasible:
                    return np.inf
                if peak > M:
                    t_a, t_b = t_next, t_probe
                    break
                t_probe = t_next
            else:
                return np.inf
        else:
            t_a, t_b = t_max * (1.0 - 1e-9), start
    # bisection on max|I*| - M between a violating and a satisfying time
    for _ in range(60):
        mid = 0.5 * (t_a + t_b)
        if _unclipped_peak_at(model, mid, charge_balanced, quad) > M:
            t_a = mid
        else:
            t_b = mid
        if abs(t_a - t_b) <= 1e-10 * max(t_a, t_b):
            break
    return 0.5 * (t_a + t_b)


def feasible_range(model: PhaseModel, M: float, charge_balanced: bool = True,
                   quad: QuadratureSpec | None = None) -> FeasibleRange:
    """Full spiking-time classification for the bound M."""
    t_min = bang_min_time(model, M, quad)
    t_max = bang_max_time(model, M, quad)
    ti_min, ti_max = istar_time_range(model, M, charge_balanced, quad)
    return FeasibleRange(M=M, T_min_M=t_min, T_max_M=t_max,
                         T_Istar_min=ti_min, T_Istar_max=ti_max)


def sinusoidal_switch_phases(omega: float, z_d: float, M: float, c: float):
    """Closed-form four-switch phases for the sinusoidal model.

    theta1 = arcsin(-2*M*omega / (z_d*M^2 + z_d*c)); the remaining three
    follow by the model's reflection symmetries.
    """
    denom = z_d * (M * M + c)
    if denom == 0:
        raise NoSwitching("degenerate constants: arcsine argument undefined")
    arg = -2.0 * M * omega / denom
    if not 0.0 < arg <= 1.0:
        raise NoSwitching(
            f"arcsine argument {arg:.6g} outside (0, 1]: |I*| never reaches the bound"
        )
    theta1 = float(np.arcsin(arg))
    return theta1, np.pi - theta1, np.pi + theta1, TWO_PI - theta1


def solve_bounded(model: PhaseModel, target_T: float, M: float,
                  charge_balanced: bool = True,
                  quad: QuadratureSpec | None = None,
                  root: RootFindConfig | None = None,
                  ode: OdeConfig | None = None):
    """Bounded minimum-power control for the prescribed spiking time.

    Returns (BoundedPolicy, ControlSolution).  When the unconstrained extremal
    already satisfies the bound the result reduces exactly to the
    unconstrained solution.
    """
    if not (M > 0 and np.isfinite(M)):
        raise BadParameter("bound M must be positive and finite")
    root = root or RootFindConfig()
    t_min = bang_min_time(model, M, quad)
    t_max = bang_max_time(model, M, quad)
    if target_T < t_min * (1.0 - 1e-9) or target_T > t_max * (1.0 + 1e-9):
        raise OutOfRange(
            f"target {target_T:.6g} outside the feasible range "
            f"[{t_min:.6g}, {'inf' if np.isinf(t_max) else format(t_max, '.6g')}]"
        )

    base = solve_extremal(model, target_T, charge_balanced, quad=quad, root=root, ode=ode)
    c0, mu0 = base.params.c, base.params.mu
    if _unclipped_max(model, c0, mu0) <= M * (1.0 + 1e-12):
        policy = BoundedPolicy(M=M, params=base.params,
                               arcs=((0.0, TWO_PI, "interior"),), switch_phases=())
        return policy, base.control

    symmetric = is_charge_symmetric(model)
    if not charge_balanced or symmetric:
        c = _solve_clipped_c(model, target_T, M, 0.0, c0, quad)
        params = ExtremalParams(c, 0.0, charge_balanced)
    else:
        x = _solve_clipped_2d(model, target_T, M, np.array([c0, mu0]), quad, root)
        params = ExtremalParams(float(x[0]), float(x[1]), True)

    arcs, switches = _build_arcs(model, params.c, params.mu, M)
    control = build_control_solution(
        model,
        lambda th: clipped_control_values(model, params, M, np.atleast_1d(th))[0]
        if np.ndim(th) == 0 else clipped_control_values(model, params, M, th),
        target_T,
        arcs=tuple(arcs),
        switch_phases=tuple(switches),
        ode=ode,
    )
    if abs(control.achieved_T - target_T) > 1e-6 * target_T:
        raise NoConvergence(
            "forward integration disagrees with the clipped-time equation",
            best=params, residual=abs(control.achieved_T - target_T),
        )
    policy = BoundedPolicy(M=M, params=params, arcs=tuple(arcs),
                           switch_phases=tuple(switches))
    return policy, control


def _solve_clipped_c(model, target_T, M, mu, c0, quad):
    """Scalar clipped-time equation in c (mu fixed), solved by bracketing."""

    def time_at(c):
        t, _ = _clipped_integrals(model, c, mu, M, quad)
        return t

    span = max(model.velocity_scale**2, 0.25 * abs(c0), 1e-6)
    t0 = time_at(c0)
    if t0 > target_T:
        hi, t_hi = c0, t0
        lo = None
        for k in range(60):
            c_try = c0 - span * 4.0**k
            t_try = time_at(c_try)
            if t_try <= target_T:
                lo = c_try
                break
        if lo is None:
            raise Infeasible("could not bracket the clipped-time equation from below")
    else:
        lo, t_lo = c0, t0
        hi = None
        for k in range(60):
            c_try = c0 + span * 4.0**k
            try:
                t_try = time_at(c_try)
            except InfeasibleParams:
                break
            if t_try >= target_T:
                hi = c_try
                break
        if hi is None:
            raise Infeasible("could not bracket the clipped-time equation from above")

    return brentq(lambda c: time_at(c) - target_T, lo, hi,
                  xtol=1e-14 * (1.0 + abs(lo) + abs(hi)), rtol=8.9e-16, maxiter=200)


def _solve_clipped_2d(model, target_T, M, x0, quad, cfg):
    """Damped Newton on (time, charge) residuals of the clipped control,
    with a homotopy in the bound as fallback for strongly clipped targets."""

    def residual_for(bound):
        def residual(x):
            t, q = _clipped_integrals(model, float(x[0]), float(x[1]), bound, quad)
            return np.array([(t - target_T) / target_T, q / (bound * target_T)])
        return residual

    try:
        return find_root_2d(residual_for(M), x0, cfg)
    except (NoConvergence, SingularJacobian, InfeasibleParams):
        pass

    peak = _unclipped_max(model, float(x0[0]), float(x0[1]))
    x = np.asarray(x0, dtype=float)
    n = max(3, int(np.ceil(np.log(peak / M) / np.log(1.15))))
    for bound in np.geomspace(peak * 0.999, M, n + 1):
        x = find_root_2d(residual_for(float(bound)), x, cfg)
    return x


def bang_arc_costate(model: PhaseModel, params: ExtremalParams, M: float,
                     sign: int, theta):
    """Costate on a bang arc: (c - M^2 -/+ mu*M)/(f +/- M*g) for I = +/-M."""
    theta = np.asarray(theta, dtype=float)
    current = M if sign > 0 else -M
    f = model.f(theta)
    g = model.g(theta)
    out = (params.c - current * current - params.mu * current) / (f + g * current)
    return float(out) if np.ndim(theta) == 0 else out
