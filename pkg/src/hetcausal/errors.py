"""Exception hierarchy.

Errors split into two families so the CLI can map them onto exit codes:
data/usage problems (exit 2) and numerical failures (exit 3).
"""


class HetCausalError(Exception):
    """Base class. ``stage`` names the pipeline step that failed, if known."""

    exit_code = 2

    def __init__(self, message="", stage=None):
        super().__init__(message)
        self.stage = stage

    def __str__(self):
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class DataError(HetCausalError):
    exit_code = 2


class InvalidData(DataError, ValueError):
    pass


class InvalidParameter(DataError, ValueError):
    pass


class DegenerateData(DataError, ValueError):
    pass


class SampleTooSmall(DataError, ValueError):
    pass


class ClusterTooSmall(SampleTooSmall):
    pass


class FormatError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message="", line=None, stage=None):
        super().__init__(message, stage=stage)
        self.line = line


class NumericalError(HetCausalError, ArithmeticError):
    exit_code = 3


class NumericalFailure(NumericalError):
    def __init__(self, message="", iteration=None, stage=None):
        super().__init__(message, stage=stage)
        self.iteration = iteration


class EstimationFailure(NumericalError):
    pass


class ClusteringFailure(NumericalError):
    pass


class GibbsFailure(NumericalError):
    pass


class InvalidMoments(NumericalError):
    pass
