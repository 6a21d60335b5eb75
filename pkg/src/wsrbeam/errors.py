"""Exception types raised by the precoder-design stack."""


class ConfigError(ValueError):
    """Invalid system configuration, solver options, or experiment spec."""


class DegenerateChannelError(ValueError):
    """A channel matrix is identically zero, so derived quantities blow up."""


class ObjectiveDomainError(ValueError):
    """Objective evaluated outside its domain (singular or indefinite weight)."""


class IllConditionedWeightError(RuntimeError):
    """Weight-matrix update failed; the receiver set is inconsistent with the
    precoders (the update is only guaranteed well-posed for fresh MMSE
    receivers). Carries a condition estimate in the message."""


class UnstableParametersError(RuntimeError):
    """First-order solver diverged; the step size / extrapolation pair is too
    aggressive for this instance."""
