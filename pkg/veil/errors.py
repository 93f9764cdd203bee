"""
Veil
Exceptions.

Every error raised on purpose by the package derives from VeilError and carries a
short machine-parseable `code`, which the command line prints on failure.

Licensed under the MIT License (see LICENSE for details)
"""

class VeilError(Exception):
    """Base class of all package errors.
    """
    code = 'E_VEIL'

    def one_line(self):
        """Single-line message for stderr, e.g. `code=E_DIM message=...`.
        """
        message = ' '.join(str(self).split())
        return "code={} message={}".format(self.code, message)


class DimensionError(VeilError, ValueError):
    """Shape mismatch between operands. The message names the offending axes.
    """
    code = 'E_DIM'


class ConfigError(VeilError, ValueError):
    code = 'E_CONFIG'


class ProtocolError(VeilError, RuntimeError):
    """A training phase was entered with the wrong parameter groups frozen.
    """
    code = 'E_PROTOCOL'


class DivergenceError(VeilError, RuntimeError):
    """Loss left the finite range allowed by TrainConfig.divergence_limit.
    The partial LoopTrace (if any) is attached as `trace`.
    """
    code = 'E_DIVERGED'

    def __init__(self, message, trace=None):
        super(DivergenceError, self).__init__(message)
        self.trace = trace


class DatasetError(VeilError, ValueError):
    """Malformed dataset file. The message names the file and, for the manifest, the line.
    """
    code = 'E_DATASET'


class DependencyError(VeilError, RuntimeError):
    """A pipeline stage was requested before the stage it reads from.
    """
    code = 'E_DEPENDENCY'


class GradientError(VeilError, RuntimeError):
    code = 'E_GRAD'
