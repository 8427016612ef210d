"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FringeError(Exception):
    exit_code = 1


class ConfigError(FringeError):
    exit_code = 3


class UnknownSceneError(FringeError):
    exit_code = 4


class CameraFileNotFoundError(FringeError):
    exit_code = 5


class InputNotFoundError(FringeError):
    exit_code = 6


class ImageFormatError(FringeError):
    """File could not be parsed as the expected raster format."""

    exit_code = 7


class DimensionMismatchError(FringeError):
    exit_code = 8


class InsufficientSamplesError(FringeError):
    exit_code = 9


class SceneOutsideFrustumError(FringeError):
    exit_code = 10


class DegenerateScheduleError(FringeError):
    exit_code = 11


class ZeroModulationError(FringeError):
    exit_code = 12


class OutputError(FringeError):
    exit_code = 13
