"""
Utilities package for the spadsim toolkit.

This package contains helpers shared across the services: logging,
validation, counter-based random draws and artifact I/O.
"""
