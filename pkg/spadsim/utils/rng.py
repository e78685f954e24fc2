"""
Counter-based random draws keyed by (seed, purpose, channel, gate_index).

Every gate owns a fixed block of the Philox counter space of its stream, so
the draws of gate ``g`` are the same whether the train is generated in one
piece, in chunks, or on several threads. Streams for different purposes and
channels use different Philox keys derived through ``numpy.random.SeedSequence``.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List

import numpy as np
from scipy.special import ndtri

# Purpose tags; never renumber, they are part of the determinism contract
PURPOSE_TAGS = {
    "photon": 1,
    "trigger": 2,
    "dark": 3,
    "afterpulse": 4,
    "amplitude": 5,
    "onset": 6,
    "noise": 7,
    "variation": 8,
}

_WORDS_PER_BLOCK = 4
_TWO_POW_M53 = 2.0**-53

# Gates per chunk when a train is drawn or rendered piecewise
DEFAULT_CHUNK_GATES = 65536


def stream_key(seed: int, purpose: str, channel: int = 0) -> np.ndarray:
    """
    Derive the 128-bit Philox key of one random stream.

    Args:
        seed: Scenario seed (non-negative, up to 64 bits).
        purpose: Name of the draw purpose (a key of ``PURPOSE_TAGS``).
        channel: Detector channel the stream belongs to.

    Returns:
        np.ndarray: Two uint64 words usable as a Philox key.
    """
    sequence = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(PURPOSE_TAGS[purpose], int(channel))
    )
    return sequence.generate_state(2, dtype=np.uint64)


def gate_words(
    seed: int,
    purpose: str,
    channel: int,
    start_gate: int,
    n_gates: int,
    per_gate: int = 1,
) -> np.ndarray:
    """
    Raw 64-bit words for a contiguous range of gates.

    Args:
        seed: Scenario seed.
        purpose: Draw purpose tag name.
        channel: Detector channel.
        start_gate: Index of the first gate of the range.
        n_gates: Number of gates in the range.
        per_gate: Words needed per gate.

    Returns:
        np.ndarray: uint64 array of shape (n_gates, per_gate).
    """
    blocks = -(-per_gate // _WORDS_PER_BLOCK)
    bitgen = np.random.Philox(
        key=stream_key(seed, purpose, channel), counter=int(start_gate) * blocks
    )
    raw = bitgen.random_raw(n_gates * blocks * _WORDS_PER_BLOCK)
    return raw.reshape(n_gates, blocks * _WORDS_PER_BLOCK)[:, :per_gate]


def gate_uniforms(
    seed: int,
    purpose: str,
    channel: int,
    start_gate: int,
    n_gates: int,
    per_gate: int = 1,
) -> np.ndarray:
    """
    Uniform draws in the open interval (0, 1), one row per gate.

    Returns:
        np.ndarray: float64 array of shape (n_gates, per_gate).
    """
    words = gate_words(seed, purpose, channel, start_gate, n_gates, per_gate)
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_POW_M53


def gate_normals(
    seed: int,
    purpose: str,
    channel: int,
    start_gate: int,
    n_gates: int,
    per_gate: int = 1,
) -> np.ndarray:
    """
    Standard normal draws by inverse-CDF transform of ``gate_uniforms``.

    Returns:
        np.ndarray: float64 array of shape (n_gates, per_gate).
    """
    return ndtri(gate_uniforms(seed, purpose, channel, start_gate, n_gates, per_gate))


def chunk_bounds(n_gates: int, chunk_gates: int = DEFAULT_CHUNK_GATES) -> List[tuple[int, int]]:
    """
    Split ``range(n_gates)`` into contiguous [start, stop) chunks.

    Args:
        n_gates: Total number of gates.
        chunk_gates: Maximum gates per chunk.

    Returns:
        List[tuple[int, int]]: Chunk boundaries in gate order.
    """
    return [
        (start, min(start + chunk_gates, n_gates))
        for start in range(0, n_gates, chunk_gates)
    ]


def map_chunks(
    func: Callable[[int, int], np.ndarray],
    n_gates: int,
    threads: int = 1,
    chunk_gates: int = DEFAULT_CHUNK_GATES,
) -> List[np.ndarray]:
    """
    Evaluate ``func(start, stop)`` over gate chunks, optionally in parallel.

    Results are returned in gate order regardless of completion order, so
    the output does not depend on the thread count.

    Args:
        func: Pure function of a chunk's gate range.
        n_gates: Total number of gates.
        threads: Worker threads (1 evaluates inline).
        chunk_gates: Maximum gates per chunk.

    Returns:
        List[np.ndarray]: One result per chunk, in gate order.
    """
    bounds = chunk_bounds(n_gates, chunk_gates)
    if threads <= 1 or len(bounds) <= 1:
        return [func(start, stop) for start, stop in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: func(*b), bounds))
