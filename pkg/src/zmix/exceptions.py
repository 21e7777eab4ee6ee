"""Exception hierarchy shared by the sampler, relabeler and CLI."""


class ZmixError(Exception):
    """Base class for all errors raised by the package."""


class InvalidInputError(ZmixError, ValueError):
    """Non-finite data, malformed states or out-of-range arguments."""


class ConfigError(ZmixError, ValueError):
    """Invalid run, ladder or pipeline configuration."""


class DataLoadError(ZmixError, OSError):
    """A dataset or trace file could not be read or failed verification."""


class NumericalError(ZmixError, FloatingPointError):
    """A probability computation degenerated (e.g. every term underflowed).

    ``iteration`` is filled in by the sampler when the failure happens
    inside a run.
    """

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class RelabelRefusal(ZmixError):
    """Relabeling refused: merged components or permutation workload too large."""


class NoInjectiveAssignment(ZmixError):
    """Candidate label sets admit no permutation; caller should widen them."""
