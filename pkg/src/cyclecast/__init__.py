"""cyclecast: sinusoidal temporal encoding + gradient-boosted trees for
hourly load forecasting, with an experiment CLI."""

__version__ = "0.1.0"
