class SpikeEngineError(Exception):
    pass


class InputDomainError(SpikeEngineError, ValueError):
    pass


class ShapeError(SpikeEngineError, ValueError):
    pass


class FormatError(SpikeEngineError):
    pass


class PayloadLengthError(FormatError):
    pass


class ModeError(SpikeEngineError):
    pass
