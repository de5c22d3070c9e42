"""Exception taxonomy. Every error raised by the library is a KdkitError subclass."""


class KdkitError(Exception):
    pass


class DimensionError(KdkitError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(KdkitError):
    """A computation produced NaN/Inf from finite inputs, or a non-finite loss."""


class ParameterError(KdkitError):
    """An argument value is outside its documented domain (bad temperature, rate, spec field)."""


class ContractError(KdkitError):
    """A call violates an API precondition that is not a plain shape or value error."""


class ConfigError(KdkitError):
    """An experiment config is malformed: unknown key, missing requirement, bad stage name."""


class FormatError(KdkitError):
    """A file failed to parse. Carries enough context to locate the offending field or line."""
