"""Connected-vehicle corridor simulator with an adaptive queue-prediction pipeline."""

__version__ = "0.1.0"
