"""
Data validation utilities for the spadsim toolkit.

Provides helper functions for range checks shared by the configuration
schemas and for the structural checks the streaming services perform on
incoming frames and threshold lists.
"""

from typing import Optional, Sequence

import numpy as np


def check_probability(value: float, name: str) -> float:
    """
    Ensure a value is a probability.

    Args:
        value: Value to check.
        name: Field name used in the error message.

    Returns:
        float: The value, unchanged.

    Raises:
        ValueError: If the value is not finite or lies outside [0, 1].
    """
    if not np.isfinite(value) or value < 0.0 or value > 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_positive(value: float, name: str) -> float:
    """
    Ensure a value is strictly positive and finite.

    Args:
        value: Value to check.
        name: Field name used in the error message.

    Returns:
        float: The value, unchanged.

    Raises:
        ValueError: If the value is not a positive finite number.
    """
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value


def validate_frame_length(samples: np.ndarray, expected: int) -> tuple[bool, Optional[str]]:
    """
    Validate that a frame has the expected number of samples.

    Args:
        samples: Frame samples (codes or volts).
        expected: Required length (samples_per_gate).

    Returns:
        tuple: (is_valid, error_message) - error_message is None if valid.
    """
    samples = np.asarray(samples)
    if samples.ndim != 1:
        return False, f"frame must be one-dimensional, got shape {samples.shape}"
    if samples.shape[0] != expected:
        return False, f"frame length {samples.shape[0]} does not match template length {expected}"
    return True, None


def validate_thresholds(thresholds: Sequence[float]) -> tuple[bool, Optional[str]]:
    """
    Validate a discrimination-level list for a sweep.

    Args:
        thresholds: Candidate V_th values in volts.

    Returns:
        tuple: (is_valid, error_message) - error_message is None if valid.
    """
    values = np.asarray(thresholds, dtype=float)
    if values.ndim != 1 or values.size == 0:
        return False, "threshold list must be a non-empty sequence"
    if not np.all(np.isfinite(values)):
        return False, "thresholds must be finite"
    if np.any(values < 0):
        return False, "thresholds must be >= 0"
    if np.any(np.diff(values) <= 0):
        return False, "thresholds must be strictly increasing"
    return True, None
