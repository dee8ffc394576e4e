"""Exception hierarchy.

Three top-level classes map onto the CLI exit codes: ConfigError -> 1,
ModelError -> 2, SsmError -> 3.
"""


class SsmOptError(Exception):
    pass


class ConfigError(SsmOptError):
    pass


class ModelError(SsmOptError):
    pass


class SsmError(SsmOptError):
    pass


class LightDampingError(ModelError):
    """Damping ratio >= 1 for the selected mode (Rayleigh coefficients too large)."""


class DegenerateModeError(ModelError):
    """Repeated natural frequency: the master pair is not uniquely defined."""


class TrackingLostError(ModelError):
    """No mode correlates with the reference shape above the MAC threshold."""

    def __init__(self, best_mac: float, threshold: float):
        self.best_mac = best_mac
        self.threshold = threshold
        super().__init__(
            f"mode tracking lost: best MAC {best_mac:.4f} below threshold {threshold}"
        )


class OuterResonanceError(SsmError):
    """A cohomological operator is numerically singular at a non-master index."""

    def __init__(self, m, rcond: float):
        self.m = m
        self.rcond = rcond
        super().__init__(
            f"cohomological operator at index {m} is numerically singular "
            f"(rcond={rcond:.2e}); a non-master mode resonates with the master pair"
        )


class DegenerateParametrizationError(SsmError):
    """Near-resonant denominator vanished while computing a reduced-dynamics coefficient."""


class AmplitudeUnreachableError(SsmError):
    """Requested physical amplitude lies beyond the validity radius of the expansion."""

    def __init__(self, x_target: float, x_max: float, rho_cap: float = 0.0):
        self.x_target = x_target
        self.x_max = x_max
        self.rho_cap = rho_cap
        super().__init__(
            f"target amplitude {x_target:.6g} unreachable; "
            f"maximum attainable within the validity radius is {x_max:.6g}"
        )


class ConjugacyError(SsmError):
    """A quantity that must be real by conjugate pairing has a large imaginary residue."""


class TurningPointError(SsmError):
    """dx/drho vanished: the amplitude map is not invertible at this point."""
