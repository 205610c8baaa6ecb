"""Exception types shared across the package."""


class SalabError(Exception):
    """Base class for package-specific failures."""


class ShapeError(SalabError, ValueError):
    """Operand shapes are incompatible."""


class EmptyPoolError(SalabError, ValueError):
    """A pooling or attention row had no unmasked entries."""


class PoisonedGradientError(SalabError, RuntimeError):
    """A gradient contained NaN; the optimizer step was aborted."""


class UndefinedMetricError(SalabError, ValueError):
    """A metric is undefined for the given label composition."""


class EmptyDocumentError(SalabError, ValueError):
    """A document contained no tokens after truncation."""
