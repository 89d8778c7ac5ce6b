from typing import Optional


class HodgeWaveError(Exception):
    """Base class for every error raised by the solver."""


class MeshError(HodgeWaveError):
    pass


class SpaceError(HodgeWaveError):
    pass


class QuadratureError(HodgeWaveError):
    pass


class AssemblyError(HodgeWaveError):
    pass


class CalculusError(HodgeWaveError):
    pass


class SolverError(HodgeWaveError):
    pass


class WaveError(HodgeWaveError):
    pass


class ConfigError(HodgeWaveError):
    """Invalid run configuration, optionally tied to a line of the config file."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigNotFoundError(ConfigError):
    pass
