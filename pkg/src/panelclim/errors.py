class PanelClimError(Exception):
    """Base class; ``exit_code`` is what the CLI returns."""

    exit_code = 1


class ConfigError(PanelClimError):
    exit_code = 2


class DataError(PanelClimError):
    exit_code = 3


class NumericalError(PanelClimError):
    exit_code = 4
