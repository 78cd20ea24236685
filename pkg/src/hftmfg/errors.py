"""Exception and warning types shared across the package."""


class ConfigError(ValueError):
    """A configuration file is malformed or violates an invariant."""


class SolverError(RuntimeError):
    """A numerical solve left its validity envelope (positivity, conditioning, ...)."""


class SimulationError(RuntimeError):
    """A population simulation or deviation solve is ill-posed."""


class ResidualWarning(UserWarning):
    """A solved equilibrium exceeds a residual tolerance but remains usable."""
