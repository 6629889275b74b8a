"""Exception hierarchy. Every error carries a short machine-readable category."""


class LatentShiftError(Exception):
    category = "error"


class InvalidArgument(LatentShiftError, ValueError):
    category = "invalid-argument"


class SingularSystemError(LatentShiftError):
    category = "singular-system"


class DegenerateInputError(LatentShiftError, ValueError):
    category = "degenerate-input"


class DegenerateAxisError(LatentShiftError):
    category = "degenerate-axis"


class NoGroundTruthAxis(LatentShiftError):
    category = "no-ground-truth-axis"


class ScorerTimeout(LatentShiftError, TimeoutError):
    category = "scorer-timeout"


class ProtocolError(LatentShiftError):
    category = "protocol"


class FormatError(LatentShiftError):
    category = "format"


class EmptyDatasetError(LatentShiftError):
    category = "empty-dataset"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class TrainingDiverged(LatentShiftError):
    category = "training-diverged"

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class MissingArtifact(LatentShiftError, FileNotFoundError):
    category = "missing-artifact"
