"""Panel climate-econometrics engine.

Seasonal climate anomalies and GDP growth panels, linear mixed-effects fits
with CR2 cluster-robust inference, and compounded climate-impact projections
with a province block bootstrap.
"""

from panelclim.errors import ConfigError, DataError, NumericalError, PanelClimError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "NumericalError", "PanelClimError", "__version__"]
