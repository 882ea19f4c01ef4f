class NeurikError(Exception):
    pass


class ContractViolation(NeurikError, ValueError):
    """Caller broke a precondition (shape mismatch, non-scalar root, bad range)."""


class NumericalFault(NeurikError, FloatingPointError):
    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"{message} (layer {layer})")
        self.layer = layer


class DegenerateRotation(NeurikError, ValueError):
    pass


class DegenerateFrame(UserWarning):
    """All keypoints of a frame coincide; scale was clamped."""


class UpsampleUnsupported(NeurikError, ValueError):
    pass


class ChunkTooLong(NeurikError, ValueError):
    pass


class CheckpointMismatch(NeurikError, ValueError):
    pass


class DataEmpty(NeurikError, ValueError):
    pass
