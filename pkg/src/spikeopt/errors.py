"""Exception hierarchy shared by all solver modules."""


class SpikeOptError(Exception):
    """Base class for all errors raised by this package."""


class BadParameter(SpikeOptError):
    """Model constructor received an out-of-range parameter."""


class NonFiniteIntegrand(SpikeOptError):
    """Integrand evaluated to NaN or infinity at a quadrature node."""


class NoConvergence(SpikeOptError):
    """Iterative solver exhausted its budget without meeting tolerance."""

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class SingularJacobian(SpikeOptError):
    """Finite-difference Jacobian is numerically singular at an iterate."""


class StepSizeUnderflow(SpikeOptError):
    """ODE integrator reduced its step below the representable minimum."""


class NonFiniteState(SpikeOptError):
    """ODE state became NaN or infinite during integration."""


class NonUniformGrid(SpikeOptError):
    """Periodic interpolation requires a uniform phase grid."""


class InfeasiblePhase(SpikeOptError):
    """Extremal control is undefined at this phase (negative radicand)."""


class NearZeroPrc(SpikeOptError):
    """Costate expression is singular where the PRC vanishes."""


class InfeasibleParams(SpikeOptError):
    """(c, mu) pair leaves no real, positive phase velocity on the cycle."""


class Infeasible(SpikeOptError):
    """No extremal parameters exist for the requested spiking time."""


class BangInfeasible(SpikeOptError):
    """Full-bang control cannot keep the phase velocity positive."""


class NoSwitching(SpikeOptError):
    """The unclipped control never reaches the amplitude bound."""


class OutOfRange(SpikeOptError):
    """Requested spiking time lies outside the feasible range for the bound."""


class NoOscillation(SpikeOptError):
    """State-space model did not settle onto a spiking limit cycle."""


class AdjointNoConvergence(SpikeOptError):
    """Backward adjoint relaxation did not reach a periodic solution."""
