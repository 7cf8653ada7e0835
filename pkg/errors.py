class PxAttackError(Exception):
    """Base class of every error raised on purpose by this project."""


### Tensors and Images ###
class ShapeError(PxAttackError, ValueError):
    pass

class ImageReadError(PxAttackError, OSError):
    pass

class UnsupportedColorTypeError(PxAttackError, ValueError):
    pass

class TensorFormatError(PxAttackError, ValueError):
    pass

class PayloadLengthError(TensorFormatError):
    pass


### Attacks ###
class AreaError(PxAttackError, ValueError):
    pass

class EmptyQueueError(PxAttackError, LookupError):
    pass

class OracleError(PxAttackError, ValueError):
    pass


### Classifiers ###
class ModelError(PxAttackError, RuntimeError):
    pass

class ModelSpecError(ModelError, ValueError):
    pass

class ModelTimeoutError(ModelError):
    pass

class ModelTransportError(ModelError):
    pass

class ModelProtocolError(ModelError):
    def __init__(self, message, request_id=None):
        if request_id is not None:
            message = f"request {request_id}: {message}"
        super().__init__(message)
        self.request_id = request_id


### Experiments ###
class ConfigError(PxAttackError, ValueError):
    pass
