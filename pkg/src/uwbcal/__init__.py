"""Learned bias compensation and outlier rejection for UWB TWR/TDoA localization."""
from uwbcal._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
