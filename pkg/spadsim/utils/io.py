"""
File writers and readers for simulation artifacts.

Frame streams are stored as a little-endian header followed by the raw
code matrix (one byte per sample up to 8 bits, two above). Every table is
CSV with fixed float formatting, so repeated runs are byte-identical.
"""

import csv
import struct
from dataclasses import astuple
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np

from spadsim.constants import (
    DECISION_HEADER,
    FRAME_HEADER_FORMAT,
    FRAME_MAGIC,
    GAIN_HEADER,
    GROUND_TRUTH_HEADER,
    RATE_HEADER,
    SWEEP_HEADER,
)
from spadsim.exceptions import SpadSimError
from spadsim.services.compensator import DecisionStream
from spadsim.services.sigmodel import FrameStream, GroundTruth

PathLike = Union[str, Path]

_HEADER_SIZE = struct.calcsize(FRAME_HEADER_FORMAT)


class ArtifactFormatError(SpadSimError):
    """Raised when an artifact file does not have the expected layout."""

    pass


def format_value(value) -> str:
    """Deterministic text form of a CSV cell."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    return str(value)


def _code_dtype(bits: int) -> str:
    return "u1" if bits <= 8 else "<u2"


def write_frames(path: PathLike, frames: FrameStream) -> Path:
    """Write a frame stream; returns the path written."""
    path = Path(path)
    header = struct.pack(FRAME_HEADER_FORMAT, FRAME_MAGIC, frames.samples_per_gate, frames.bits, len(frames))
    with path.open("wb") as handle:
        handle.write(header)
        handle.write(np.ascontiguousarray(frames.codes, dtype=_code_dtype(frames.bits)).tobytes())
    return path


def read_frames(path: PathLike, channel: int = 0) -> FrameStream:
    """
    Read a frame stream written by ``write_frames``.

    Raises:
        ArtifactFormatError: If the magic, header or payload size is wrong.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER_SIZE:
        raise ArtifactFormatError(f"{path}: truncated frame header")
    magic, samples_per_gate, bits, n_gates = struct.unpack_from(FRAME_HEADER_FORMAT, data)
    if magic != FRAME_MAGIC:
        raise ArtifactFormatError(f"{path}: not a frame file (magic {magic!r})")
    dtype = np.dtype(_code_dtype(bits))
    expected = n_gates * samples_per_gate * dtype.itemsize
    if len(data) - _HEADER_SIZE != expected:
        raise ArtifactFormatError(f"{path}: payload is {len(data) - _HEADER_SIZE} bytes, expected {expected}")
    codes = np.frombuffer(data, dtype=dtype, offset=_HEADER_SIZE).reshape(n_gates, samples_per_gate)
    return FrameStream(channel=channel, codes=codes.astype(np.uint16), bits=bits)


def write_table(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write a CSV table with ``format_value`` cells."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(value) for value in row])
    return path


def read_table(path: PathLike) -> List[dict]:
    """Read a CSV table into a list of string-valued dicts."""
    with Path(path).open(newline="") as handle:
        return list(csv.DictReader(handle))


def write_ground_truth(path: PathLike, truth: GroundTruth) -> Path:
    return write_table(path, GROUND_TRUTH_HEADER, (astuple(record) for record in truth.records()))


def write_decisions(path: PathLike, streams: Sequence[DecisionStream]) -> Path:
    """Write the decisions of all channels, channel by channel, in gate order."""

    def rows():
        for stream in streams:
            for gate_index, click, peak_v, peak_sample, withheld in zip(
                stream.gate_index, stream.click, stream.peak_v, stream.peak_sample, stream.withheld
            ):
                yield gate_index, stream.channel, click, peak_v, peak_sample, withheld

    return write_table(path, DECISION_HEADER, rows())


def write_sweep(path: PathLike, rows: Iterable) -> Path:
    return write_table(path, SWEEP_HEADER, (row.csv_values() for row in rows))


def write_rates(path: PathLike, points: Iterable) -> Path:
    return write_table(path, RATE_HEADER, (point.csv_values() for point in points))


def write_gain_curve(path: PathLike, curve: Iterable[Sequence[float]]) -> Path:
    return write_table(path, GAIN_HEADER, curve)
