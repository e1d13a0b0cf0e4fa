"""Exception types shared across the package."""


class GdpsgdError(Exception):
    pass


class RejectedInput(GdpsgdError, ValueError):
    """Input has the wrong shape, range or type for the operation."""


class NumericError(GdpsgdError, ArithmeticError):
    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"{message} (layer: {layer})")
        self.layer = layer


class SizingError(RejectedInput):
    pass


class ZeroWeightError(RejectedInput):
    pass


class EmptyAccumulatorError(GdpsgdError):
    pass


class RangeViolation(GdpsgdError):
    """A message was sent to a device outside the sender's range."""


class PairingViolation(GdpsgdError):
    """A gossip matching broke disjointness, edge validity or eligibility."""


class NonConvergenceError(GdpsgdError):
    pass


class DisconnectedGraphError(GdpsgdError, ValueError):
    pass


class ConfigError(RejectedInput):
    pass
