"""Exception hierarchy shared by every module in the package."""


class FidelityError(Exception):
    """Base class for all package errors."""


class ConfigError(FidelityError, ValueError):
    """Invalid user-supplied parameters (CLI exit code 2)."""


class DataIntegrityError(FidelityError):
    """Stored artifacts disagree with each other or with their own invariants (exit code 3)."""


# quantum core
class UnsupportedState(ConfigError):
    pass


class DimensionMismatch(FidelityError, ValueError):
    pass


class LengthMismatch(FidelityError, ValueError):
    pass


class NonPSDInput(FidelityError, ValueError):
    pass


# state generation
class InfeasibleSpec(FidelityError):
    pass


class TooFewStates(ConfigError):
    pass


# measurement
class ZeroTotal(FidelityError, ValueError):
    pass


# setting selection
class KOutOfRange(ConfigError):
    pass


# datasets and models
class BadEdges(ConfigError):
    pass


class SchemaMismatch(DataIntegrityError):
    pass


class CorruptRecord(DataIntegrityError):
    pass


class ShapeMismatch(FidelityError, ValueError):
    pass


class LabelOutOfRange(FidelityError, ValueError):
    pass


class EmptyDataset(ConfigError):
    pass


class NonFiniteLoss(FidelityError, ArithmeticError):
    pass


# estimation
class MissingModel(FidelityError, KeyError):
    pass


class LayoutMismatch(DataIntegrityError):
    pass


class DegenerateWeight(FidelityError):
    pass


class IoError(DataIntegrityError, OSError):
    """Unreadable or truncated artifact file."""
