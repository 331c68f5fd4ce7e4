"""Full conductance-based neuron models and their phase reductions.

Hodgkin-Huxley (4-D) and Morris-Lecar (2-D) right-hand sides with analytic
Jacobians, attracting-limit-cycle detection via spike-marker crossings, and
PRC extraction by backward relaxation of the adjoint (transposed variational)
equation.  External current enters the voltage equation additively as I/C,
so the PRC in current units is the voltage component of the normalised
adjoint divided by C.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import AdjointNoConvergence, BadParameter, NoOscillation, NonFiniteState
from .models import PrcTable
from .numerics import TWO_PI, OdeConfig, integrate_ode

HH_PARAMS = {
    "V_Na": 50.0, "V_K": -77.0, "V_L": -54.4,
    "g_Na": 120.0, "g_K": 36.0, "g_L": 0.3,
    "C": 1.0, "I_b": 10.0,
}

ML_PARAMS = {
    "phi": 0.5, "I_b": 0.09,
    "V_1": -0.01, "V_2": 0.15, "V_3": 0.1, "V_4": 0.145,
    "g_Ca": 1.0, "g_K": 2.0, "g_L": 0.5,
    "V_Ca": 1.0, "V_K": -0.7, "V_L": -0.5,
    "C": 1.0,
}


def _phi_ratio(u):
    """u / (1 - exp(-u)) with the removable singularity at u = 0."""
    if abs(u) < 1e-6:
        return 1.0 + 0.5 * u + u * u / 12.0
    return u / -math.expm1(-u)


def _phi_ratio_prime(u):
    if abs(u) < 1e-6:
        return 0.5 + u / 6.0
    e = -math.expm1(-u)  # 1 - exp(-u)
    return (e - u * math.exp(-u)) / (e * e)


@dataclass(frozen=True)
class ConductanceModel:
    """State-space neuron model with additive input current on the V equation."""

    name: str
    dimension: int
    params: dict
    spike_marker: float

    def rhs(self, state, I_ext=0.0):
        raise NotImplementedError

    def jacobian(self, state):
        raise NotImplementedError

    def initial_state(self):
        raise NotImplementedError

    def gating_slice(self):
        """Index range of gating variables constrained to [0, 1]."""
        return slice(1, self.dimension)


@dataclass(frozen=True)
class HodgkinHuxley(ConductanceModel):
    name: str = "hodgkin-huxley"
    dimension: int = 4
    params: dict = field(default_factory=lambda: dict(HH_PARAMS))
    spike_marker: float = 0.0

    @staticmethod
    def a_m(V):
        return _phi_ratio((V + 40.0) / 10.0)

    @staticmethod
    def b_m(V):
        return 4.0 * math.exp(-(V + 65.0) / 18.0)

    @staticmethod
    def a_h(V):
        return 0.07 * math.exp(-(V + 65.0) / 20.0)

    @staticmethod
    def b_h(V):
        return 1.0 / (1.0 + math.exp(-(V + 35.0) / 10.0))

    @staticmethod
    def a_n(V):
        return 0.1 * _phi_ratio((V + 55.0) / 10.0)

    @staticmethod
    def b_n(V):
        return 0.125 * math.exp(-(V + 65.0) / 80.0)

    def rhs(self, state, I_ext=0.0):
        V, m, h, n = state
        if not (math.isfinite(V) and math.isfinite(m) and math.isfinite(h) and math.isfinite(n)):
            raise NonFiniteState("state is not finite")
        p = self.params
        ionic = (p["g_Na"] * m**3 * h * (V - p["V_Na"])
                 + p["g_K"] * n**4 * (V - p["V_K"])
                 + p["g_L"] * (V - p["V_L"]))
        dV = (p["I_b"] + I_ext - ionic) / p["C"]
        return np.array([
            dV,
            self.a_m(V) * (1.0 - m) - self.b_m(V) * m,
            self.a_h(V) * (1.0 - h) - self.b_h(V) * h,
            self.a_n(V) * (1.0 - n) - self.b_n(V) * n,
        ])

    def jacobian(self, state):
        V, m, h, n = state
        p = self.params
        C = p["C"]
        J = np.zeros((4, 4))
        J[0, 0] = -(p["g_Na"] * m**3 * h + p["g_K"] * n**4 + p["g_L"]) / C
        J[0, 1] = -3.0 * p["g_Na"] * m**2 * h * (V - p["V_Na"]) / C
        J[0, 2] = -p["g_Na"] * m**3 * (V - p["V_Na"]) / C
        J[0, 3] = -4.0 * p["g_K"] * n**3 * (V - p["V_K"]) / C

        da_m = _phi_ratio_prime((V + 40.0) / 10.0) / 10.0
        db_m = -self.b_m(V) / 18.0
        da_h = -self.a_h(V) / 20.0
        bh = self.b_h(V)
        db_h = bh * (1.0 - bh) / 10.0
        da_n = 0.1 * _phi_ratio_prime((V + 55.0) / 10.0) / 10.0
        db_n = -self.b_n(V) / 80.0

        J[1, 0] = da_m * (1.0 - m) - db_m * m
        J[1, 1] = -(self.a_m(V) + self.b_m(V))
        J[2, 0] = da_h * (1.0 - h) - db_h * h
        J[2, 2] = -(self.a_h(V) + self.b_h(V))
        J[3, 0] = da_n * (1.0 - n) - db_n * n
        J[3, 3] = -(self.a_n(V) + self.b_n(V))
        return J

    def initial_state(self):
        V = -65.0
        return np.array([
            V,
            self.a_m(V) / (self.a_m(V) + self.b_m(V)),
            self.a_h(V) / (self.a_h(V) + self.b_h(V)),
            self.a_n(V) / (self.a_n(V) + self.b_n(V)),
        ])


@dataclass(frozen=True)
class MorrisLecar(ConductanceModel):
    name: str = "morris-lecar"
    dimension: int = 2
    params: dict = field(default_factory=lambda: dict(ML_PARAMS))
    spike_marker: float = 0.05

    def m_inf(self, V):
        p = self.params
        return 0.5 * (1.0 + math.tanh((V - p["V_1"]) / p["V_2"]))

    def w_inf(self, V):
        p = self.params
        return 0.5 * (1.0 + math.tanh((V - p["V_3"]) / p["V_4"]))

    def tau_w(self, V):
        p = self.params
        return 1.0 / math.cosh((V - p["V_3"]) / (2.0 * p["V_4"]))

    def rhs(self, state, I_ext=0.0):
        V, w = state
        if not (math.isfinite(V) and math.isfinite(w)):
            raise NonFiniteState("state is not finite")
        p = self.params
        dV = (p["I_b"] + I_ext
              + p["g_Ca"] * self.m_inf(V) * (p["V_Ca"] - V)
              + p["g_K"] * w * (p["V_K"] - V)
              + p["g_L"] * (p["V_L"] - V)) / p["C"]
        dw = p["phi"] * (self.w_inf(V) - w) / self.tau_w(V)
        return np.array([dV, dw])

    def jacobian(self, state):
        V, w = state
        p = self.params
        C = p["C"]
        sech1 = 1.0 / math.cosh((V - p["V_1"]) / p["V_2"])
        dm_inf = 0.5 * sech1 * sech1 / p["V_2"]
        sech3 = 1.0 / math.cosh((V - p["V_3"]) / p["V_4"])
        dw_inf = 0.5 * sech3 * sech3 / p["V_4"]
        u = (V - p["V_3"]) / (2.0 * p["V_4"])
        J = np.zeros((2, 2))
        J[0, 0] = (p["g_Ca"] * (dm_inf * (p["V_Ca"] - V) - self.m_inf(V))
                   - p["g_K"] * w - p["g_L"]) / C
        J[0, 1] = p["g_K"] * (p["V_K"] - V) / C
        J[1, 0] = p["phi"] * (dw_inf * math.cosh(u)
                              + (self.w_inf(V) - w) * math.sinh(u) / (2.0 * p["V_4"]))
        J[1, 1] = -p["phi"] * math.cosh(u)
        return J

    def initial_state(self):
        return np.array([0.0, 0.0])


def hh_rhs(state, I_ext=0.0, model: HodgkinHuxley | None = None):
    """Hodgkin-Huxley state derivative for an external current I_ext."""
    return (model or HodgkinHuxley()).rhs(state, I_ext)


def ml_rhs(state, I_ext=0.0, model: MorrisLecar | None = None):
    """Morris-Lecar state derivative for an external current I_ext."""
    return (model or MorrisLecar()).rhs(state, I_ext)


def parse_param_overrides(text: str) -> dict:
    """Flat 'key=value' lines (blank lines and '#' comments allowed)."""
    out = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise BadParameter(f"malformed override line: {raw!r}")
        out[key.strip()] = float(value)
    return out


def make_model(name: str, overrides: dict | None = None) -> ConductanceModel:
    base = {"hh": HH_PARAMS, "ml": ML_PARAMS}.get(name)
    if base is None:
        raise BadParameter(f"unknown conductance model {name!r}")
    params = dict(base)
    for key, value in (overrides or {}).items():
        if key not in params:
            raise BadParameter(f"unknown parameter {key!r} for model {name!r}")
        params[key] = value
    if name == "hh":
        return HodgkinHuxley(params=params)
    return MorrisLecar(params=params)


@dataclass(frozen=True, eq=False)
class LimitCycle:
    """One period of the attracting orbit, phase-aligned to the spike marker."""

    period: float
    omega: float
    times: np.ndarray       # n+1 samples from 0 to period inclusive
    states: np.ndarray      # (n+1, dim); first and last rows identical
    closure_error: float
    _splines: tuple = field(repr=False, default=())

    def state_at(self, t):
        """Cycle state at time t (phase theta = omega * t), periodic in t."""
        tau = np.mod(t, self.period)
        if np.ndim(tau) == 0:
            return np.array([s(tau) for s in self._splines])
        return np.stack([s(tau) for s in self._splines], axis=-1)


def _check_gating(model: ConductanceModel, states: np.ndarray):
    gate = states[:, model.gating_slice()]
    if gate.size and (gate.min() < -1e-6 or gate.max() > 1.0 + 1e-6):
        raise NonFiniteState("gating variable left [0, 1] during integration")


def find_limit_cycle(model: ConductanceModel,
                     transient_periods: int = 20,
                     n_samples: int = 4096,
                     time_budget: float = 2000.0) -> LimitCycle:
    """Locate the attracting spiking orbit and its period.

    Integrates past the transient (at least ``transient_periods`` rough
    periods after the first marker crossing), then refines one period from a
    marker crossing with tight tolerances and dense output.
    """
    marker = model.spike_marker

    def upcross(t, y):
        return y[0] - marker
    upcross.direction = 1

    rough_cfg = OdeConfig(rel_tol=1e-7, abs_tol=1e-9)
    chunk = time_budget / 4.0
    t0 = 0.0
    y0 = model.initial_state()
    hits_t = []
    hits_y = []
    while t0 < time_budget:
        sol = integrate_ode(lambda t, y: model.rhs(y), y0, (t0, t0 + chunk),
                            rough_cfg, events=upcross)
        hits_t.extend(sol.t_events[0].tolist())
        hits_y.extend(list(sol.y_events[0]))
        y0 = sol.y[:, -1]
        t0 += chunk
        if len(hits_t) >= 3:
            rough_period = hits_t[-1] - hits_t[-2]
            if hits_t[-1] - hits_t[0] >= transient_periods * rough_period:
                break
    if len(hits_t) < 3:
        raise NoOscillation("no repeated spike-marker crossings within the time budget")
    rough_period = float(np.mean(np.diff(hits_t[-3:])))
    start_state = np.asarray(hits_y[-1], dtype=float)

    tight_cfg = OdeConfig(rel_tol=1e-11, abs_tol=1e-13, dense_output=True,
                          max_step=rough_period / 200.0)
    ref = integrate_ode(lambda t, y: model.rhs(y), start_state,
                        (0.0, 1.6 * rough_period), tight_cfg, events=upcross)
    hits = [t for t in ref.t_events[0] if t > 0.25 * rough_period]
    if not hits:
        raise NoOscillation("marker crossing did not recur at the tight tolerance")
    period = float(hits[0])

    times = np.linspace(0.0, period, n_samples + 1)
    states = ref.sol(times).T
    _check_gating(model, states)
    closure = float(np.linalg.norm(states[-1] - states[0])
                    / max(np.linalg.norm(states[0]), 1e-300))
    states[-1] = states[0]
    splines = tuple(
        CubicSpline(times, states[:, k], bc_type="periodic")
        for k in range(model.dimension)
    )
    return LimitCycle(period=period, omega=TWO_PI / period, times=times,
                      states=states, closure_error=closure, _splines=splines)


def compute_adjoint(model: ConductanceModel, cycle: LimitCycle,
                    n_samples: int = 1024, max_rounds: int = 60,
                    tol: float = 1e-8):
    """Periodic solution of the transposed variational equation along the cycle.

    Integrated backward over repeated periods until periodic to ``tol``, then
    normalised once (single scalar) so the inner product with the unforced
    vector field equals omega.  Returns (t_grid, Z) with Z of shape
    (n_samples, dim); rows are the full adjoint at forward times t_grid.
    """
    T = cycle.period
    omega = cycle.omega
    check_t = np.linspace(0.0, T, 129)[:-1]

    def backward_rhs(s, z):
        # backward time s = T - t: dz/ds = +J(gamma(T - s))^T z
        return model.jacobian(cycle.state_at(T - s)) @ z

    adj_cfg = OdeConfig(rel_tol=1e-10, abs_tol=1e-13, dense_output=True,
                        max_step=T / 200.0)

    def field_at(t):
        return model.rhs(cycle.state_at(t))

    def anchor_scale(z_vec):
        rho = float(z_vec @ field_at(0.0))
        if abs(rho) < 1e-12 * np.linalg.norm(z_vec):
            rho = float(np.linalg.norm(z_vec))
        return rho

    z0 = np.zeros(model.dimension)
    z0[0] = 1.0
    prev = None
    sol = None
    for _ in range(max_rounds):
        sol = integrate_ode(backward_rhs, z0, (0.0, T), adj_cfg)
        samples = sol.sol(T - check_t) / anchor_scale(sol.sol(T - check_t[0]))
        if prev is not None:
            scale = max(float(np.max(np.abs(samples))), 1e-300)
            if float(np.max(np.abs(samples - prev))) <= tol * scale:
                break
        prev = samples
        z_end = sol.sol(T)
        z0 = z_end / anchor_scale(z_end)
    else:
        raise AdjointNoConvergence(
            f"adjoint relaxation did not become periodic in {max_rounds} rounds"
        )

    t_grid = np.linspace(0.0, T, n_samples + 1)[:-1]
    z = sol.sol(T - t_grid)  # shape (dim, n)
    inner = np.array([z[:, k] @ field_at(t_grid[k]) for k in range(n_samples)])
    z = z * (omega / float(np.mean(inner)))
    return t_grid, z.T


def compute_prc(model: ConductanceModel, cycle: LimitCycle,
                n_samples: int = 1024, max_rounds: int = 60,
                tol: float = 1e-8) -> PrcTable:
    """PRC by the adjoint method: the normalised adjoint's voltage component
    scaled by 1/C, on a uniform phase grid with theta = 0 at the spike."""
    t_grid, z = compute_adjoint(model, cycle, n_samples, max_rounds, tol)
    C = model.params["C"]
    theta = TWO_PI * t_grid / cycle.period
    return PrcTable(theta_grid=theta, z_values=z[:, 0] / C, omega=cycle.omega)
