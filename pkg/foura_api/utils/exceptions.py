"""
Custom exceptions used by :mod:`foura_api`
"""


class FouraError(Exception):
    """Base class for every error raised by the workbench"""
    pass


class NumericalFailure(FouraError):
    """Marker base for failures of the numerics rather than of the inputs (CLI exit code 2)"""
    pass


class InvalidInput(FouraError):
    """Raised when an input holds NaN/Inf, is empty, or lies outside its allowed range"""
    pass


class InvalidRank(FouraError):
    """Raised when a requested rank is outside 1..min(rows, cols) for the operation"""
    pass


class ShapeError(FouraError):
    """Raised when matrix shapes do not line up"""
    pass


class InvalidGateState(FouraError):
    """Raised when a gate is inconsistent with its mode (e.g. frozen mode without a frozen mask)"""
    pass


class ConfigError(FouraError):
    """Raised when a configuration file or command line value fails validation"""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super(ConfigError, self).__init__(prefix + message)


class IncompatibleAdapters(FouraError):
    """Raised when adapters to be merged do not share base weights or shapes"""
    pass


class IncompatibleCheckpoints(FouraError):
    """Raised when checkpoints handed to one command hold shape-incompatible layers"""
    pass


class CheckpointFormatError(FouraError):
    """Raised when a checkpoint has a bad magic, an unknown version, or a truncated payload"""
    pass


class NonDifferentiable(NumericalFailure):
    """Raised when gradients are requested through a hard threshold"""
    pass


class TrainingDiverged(NumericalFailure):
    """Raised when a loss or gradient becomes NaN/Inf during training"""
    pass


class DegenerateBound(NumericalFailure):
    """Raised when the generalization bound denominator is not positive"""
    pass


class DegenerateProjection(NumericalFailure):
    """Raised when the base weights have (numerically) no component in the adapter subspace"""
    pass


class DegenerateSubspace(NumericalFailure):
    """Raised when a projection target subspace comes from a zero matrix"""
    pass
