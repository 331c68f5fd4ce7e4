"""Phase-reduced oscillator models: d(theta)/dt = f(theta) + g(theta) * I.

Provides the built-in sinusoidal, SNIPER, and theta-neuron models plus
tabulated models built from a sampled phase response curve (PRC).  Phase zero
marks the spike; one cycle covers [0, 2*pi).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BadParameter, NonUniformGrid
from .numerics import TWO_PI, periodic_interpolant

_CHECK_GRID = np.linspace(0.0, TWO_PI, 257)[:-1]


@dataclass(frozen=True, eq=False)
class PhaseModel:
    """Scalar phase oscillator with baseline rate f and PRC g.

    ``omega`` is the natural frequency 2*pi/T0 when the model spikes on its
    own; non-autonomous models (theta neuron with I_b <= 0) carry None.
    All callables accept numpy arrays.
    """

    kind: str
    f: Callable
    g: Callable
    f_prime: Callable
    g_prime: Callable
    omega: float | None
    params: dict
    autonomous: bool
    f_scale: float = field(default=0.0)
    g_max: float = field(default=0.0)

    def __post_init__(self):
        fv = np.asarray(self.f(_CHECK_GRID), dtype=float)
        gv = np.asarray(self.g(_CHECK_GRID), dtype=float)
        fw = np.asarray(self.f(_CHECK_GRID + TWO_PI), dtype=float)
        gw = np.asarray(self.g(_CHECK_GRID + TWO_PI), dtype=float)
        f_scale = float(np.max(np.abs(fv))) or 1.0
        g_max = float(np.max(np.abs(gv)))
        if np.max(np.abs(fv - fw)) > 1e-9 * f_scale:
            raise BadParameter("f is not 2*pi-periodic")
        if np.max(np.abs(gv - gw)) > 1e-9 * max(g_max, 1.0):
            raise BadParameter("g is not 2*pi-periodic")
        if self.autonomous and np.min(fv) <= 0.0:
            raise BadParameter("autonomous model requires f > 0 everywhere")
        object.__setattr__(self, "f_scale", f_scale)
        object.__setattr__(self, "g_max", g_max)

    @property
    def natural_period(self) -> float | None:
        """Spiking period with zero input, or None if non-autonomous."""
        if self.omega is None:
            return None
        return TWO_PI / self.omega

    @property
    def velocity_scale(self) -> float:
        """Characteristic magnitude of the baseline phase velocity."""
        return self.omega if self.omega is not None else self.f_scale


@dataclass(frozen=True, eq=False)
class PrcTable:
    """Uniformly sampled PRC Z(theta) with the cycle's natural frequency."""

    theta_grid: np.ndarray
    z_values: np.ndarray
    omega: float

    def __post_init__(self):
        theta = np.asarray(self.theta_grid, dtype=float)
        z = np.asarray(self.z_values, dtype=float)
        if theta.ndim != 1 or theta.size < 64:
            raise NonUniformGrid("PRC table needs at least 64 samples")
        step = TWO_PI / theta.size
        if theta[0] != 0.0 or np.max(np.abs(np.diff(theta) - step)) > 1e-9 * step:
            raise NonUniformGrid("PRC grid must be uniform on [0, 2*pi)")
        if not self.omega > 0:
            raise BadParameter("omega must be positive")
        object.__setattr__(self, "theta_grid", theta)
        object.__setattr__(self, "z_values", z)


@dataclass(frozen=True, eq=False)
class PhaseTrajectory:
    """Time-sampled phase path with accumulated charge p(t) and control."""

    times: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    control: np.ndarray


def make_sinusoidal(omega: float, z_d: float) -> PhaseModel:
    """f = omega, g = z_d*sin(theta): type II PRC near a Hopf bifurcation."""
    if not omega > 0:
        raise BadParameter("omega must be positive")
    if z_d == 0:
        raise BadParameter("z_d must be nonzero")
    return PhaseModel(
        kind="sinusoidal",
        f=lambda th: np.full_like(np.asarray(th, dtype=float), omega),
        g=lambda th: z_d * np.sin(th),
        f_prime=lambda th: np.zeros_like(np.asarray(th, dtype=float)),
        g_prime=lambda th: z_d * np.cos(th),
        omega=omega,
        params={"omega": omega, "z_d": z_d},
        autonomous=True,
    )


def make_sniper(omega: float, z_d: float) -> PhaseModel:
    """f = omega, g = z_d*(1 - cos(theta)): type I PRC from a SNIPER bifurcation."""
    if not omega > 0:
        raise BadParameter("omega must be positive")
    if z_d == 0:
        raise BadParameter("z_d must be nonzero")
    return PhaseModel(
        kind="sniper",
        f=lambda th: np.full_like(np.asarray(th, dtype=float), omega),
        g=lambda th: z_d * (1.0 - np.cos(th)),
        f_prime=lambda th: np.zeros_like(np.asarray(th, dtype=float)),
        g_prime=lambda th: z_d * np.sin(th),
        omega=omega,
        params={"omega": omega, "z_d": z_d},
        autonomous=True,
    )


def make_theta(I_b: float) -> PhaseModel:
    """Theta neuron: f = 1 + cos(theta) + (1 - cos(theta))*I_b, g = 1 - cos(theta).

    Spikes autonomously with period pi/sqrt(I_b) only for I_b > 0; otherwise f
    changes sign and an input is required to elicit spikes.
    """
    autonomous = I_b > 0
    omega = 2.0 * np.sqrt(I_b) if autonomous else None
    return PhaseModel(
        kind="theta",
        f=lambda th: 1.0 + np.cos(th) + (1.0 - np.cos(th)) * I_b,
        g=lambda th: 1.0 - np.cos(th),
        f_prime=lambda th: np.sin(th) * (I_b - 1.0),
        g_prime=lambda th: np.sin(th),
        omega=omega,
        params={"I_b": I_b},
        autonomous=autonomous,
    )


def make_tabulated(table: PrcTable) -> PhaseModel:
    """Constant-frequency model whose PRC interpolates the given table."""
    spline = periodic_interpolant(table.theta_grid, table.z_values)
    omega = table.omega
    return PhaseModel(
        kind="tabulated",
        f=lambda th: np.full_like(np.asarray(th, dtype=float), omega),
        g=spline,
        f_prime=lambda th: np.zeros_like(np.asarray(th, dtype=float)),
        g_prime=spline.derivative,
        omega=omega,
        params={"omega": omega, "samples": table.theta_grid.size},
        autonomous=True,
    )


def save_prc_table(table: PrcTable, path) -> None:
    """Write the PRC CSV: '# omega=...' metadata line, then 'theta,Z' rows."""
    buf = io.StringIO()
    buf.write(f"# omega={table.omega:.12g}\n")
    buf.write("theta,Z\n")
    for th, z in zip(table.theta_grid, table.z_values):
        buf.write(f"{th:.12g},{z:.12g}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def load_prc_table(path) -> PrcTable:
    """Read a PRC CSV produced by :func:`save_prc_table`."""
    omega = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line.lstrip("#").strip().partition("=")
                if key.strip() == "omega":
                    omega = float(value)
                continue
            if line.lower().startswith("theta"):
                continue
            parts = line.split(",")
            rows.append((float(parts[0]), float(parts[1])))
    if omega is None:
        raise NonUniformGrid("PRC file is missing the '# omega=' metadata line")
    if not rows:
        raise NonUniformGrid("PRC file holds no samples")
    data = np.asarray(rows, dtype=float)
    return PrcTable(theta_grid=data[:, 0], z_values=data[:, 1], omega=omega)
