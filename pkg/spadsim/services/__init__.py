"""
Services package for the spadsim toolkit.

This package contains the simulation and analysis services: signal
synthesis, charge-pulse compensation, detector characterisation, key-rate
evaluation and hardware budget checks.
"""
