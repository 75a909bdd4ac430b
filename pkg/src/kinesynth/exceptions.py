class KinesynthError(Exception):
    pass


class ConfigurationError(KinesynthError, ValueError):
    """Invalid preset, camera or run configuration."""


class SimulationDiverged(KinesynthError, RuntimeError):
    def __init__(self, frame, message="non-finite body state"):
        self.frame = frame
        super().__init__(f"{message} at frame {frame}")


class BehindCameraError(KinesynthError, ValueError):
    pass


class ShapeMismatchError(KinesynthError, ValueError):
    pass


class ValidationError(KinesynthError):
    """A dataset file failed format validation.

    Carries the offending path and modality so callers can report them.
    """

    def __init__(self, path, modality, reason):
        self.path = str(path)
        self.modality = modality
        self.reason = reason
        super().__init__(f"{modality} file {self.path}: {reason}")


class EmptyTrackError(KinesynthError, ValueError):
    pass


class InsufficientFramesError(KinesynthError, ValueError):
    pass
