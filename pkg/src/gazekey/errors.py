"""Exception hierarchy shared by every pipeline stage."""


class GazeKeyError(Exception):
    """Base class for all errors raised by gazekey."""


class InputError(GazeKeyError):
    """Malformed or out-of-range input (CLI exit code 2)."""


class PipelineError(GazeKeyError):
    """A stage could not produce a result from valid input (CLI exit code 3)."""


class ParseError(InputError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonMonotonicTimestamps(InputError):
    pass


class GazeAwayFromPlane(PipelineError):
    pass


class UnlabeledData(InputError):
    pass


class DegenerateFeatures(InputError):
    pass


class CheckpointVersionError(InputError):
    pass


class LengthMismatch(InputError):
    pass


class SegmentTooShort(PipelineError):
    pass


class InsufficientDips(PipelineError):
    pass


class DegenerateGaze(PipelineError):
    pass


class RankDeficient(PipelineError):
    pass


class InsufficientSpread(PipelineError):
    pass


class EmptyFixation(PipelineError):
    pass


class UnmappableCharacter(InputError):
    pass


class MissingGroundTruth(InputError):
    pass
