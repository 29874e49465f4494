"""Sensing with unsynchronized transmitter and receiver clocks.

Submodules: ``signal_model`` (CSI synthesis), ``estimators`` (periodogram,
MUSIC, peaks), ``cacc`` and ``casr`` (single-receiver clock cancellation),
``gps_timestamp`` (GPS-aided timestamping), ``networked`` (TDOA, AOA and EM
localization) and ``bench`` (CLI harness).
"""

__version__ = "0.1.0"
