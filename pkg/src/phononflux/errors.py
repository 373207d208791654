"""Exception hierarchy shared by all phononflux modules."""


class PhononfluxError(Exception):
    """Base class for every error raised by the package."""


class ModelError(PhononfluxError, ValueError):
    """Interaction matrix is malformed (asymmetric, duplicated entries, bad shapes)."""


class GridMismatchError(PhononfluxError, ValueError):
    """Two objects that must share a torus grid do not."""


class NumericalError(PhononfluxError, ArithmeticError):
    """A numeric invariant failed beyond tolerance (non-finite data, imaginary residue, ...)."""


class ConditionError(NumericalError):
    """One of the structural conditions on the force matrix fails (E3, E6)."""


class SingularBranchError(NumericalError):
    """A quantity divides by a dispersion branch that vanishes."""


class CertificationError(PhononfluxError, ValueError):
    """A test function does not avoid the critical set."""

    def __init__(self, message, suggestion=None):
        super().__init__(message)
        self.suggestion = suggestion


class ConfigError(PhononfluxError, ValueError):
    """Invalid experiment configuration; ``pointer`` is a JSON pointer to the bad field."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
