"""Exception hierarchy shared across the pipeline.

The CLI maps :class:`DataError` to exit code 2 and :class:`NumericalError`
to exit code 3.
"""


class DataError(ValueError):
    """Malformed or inconsistent input data (manifests, audio, CSVs, archives)."""


class ManifestError(DataError):
    pass


class AudioError(DataError):
    pass


class CheckpointError(DataError):
    pass


class UndefinedMetricError(DataError):
    """A score whose denominator is empty (e.g. SE with no adventitious samples)."""


class NumericalError(ArithmeticError):
    """Training produced a non-finite value."""
