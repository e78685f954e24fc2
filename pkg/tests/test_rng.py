import numpy as np
from numpy.testing import assert_array_equal

from spadsim.utils.rng import chunk_bounds, gate_normals, gate_uniforms, gate_words, map_chunks, stream_key


def test_draws_do_not_depend_on_chunking():
    whole = gate_uniforms(11, "dark", 0, 0, 1000, per_gate=3)
    part = gate_uniforms(11, "dark", 0, 400, 250, per_gate=3)
    assert_array_equal(whole[400:650], part)


def test_wide_rows_span_several_blocks():
    whole = gate_words(5, "noise", 1, 0, 64, per_gate=16)
    part = gate_words(5, "noise", 1, 17, 3, per_gate=16)
    assert_array_equal(whole[17:20], part)


def test_purposes_and_channels_are_independent_streams():
    base = gate_uniforms(3, "photon", 0, 0, 100)
    assert not np.array_equal(base, gate_uniforms(3, "dark", 0, 0, 100))
    assert not np.array_equal(base, gate_uniforms(3, "photon", 1, 0, 100))
    assert not np.array_equal(stream_key(3, "photon", 0), stream_key(4, "photon", 0))


def test_uniforms_are_in_open_unit_interval():
    u = gate_uniforms(1, "trigger", 0, 0, 50_000)
    assert u.min() > 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01


def test_normals_are_standard():
    z = gate_normals(2, "amplitude", 0, 0, 100_000)
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1.0) < 0.02


def test_chunk_bounds_cover_range_in_order():
    bounds = chunk_bounds(10, 4)
    assert bounds == [(0, 4), (4, 8), (8, 10)]
    assert chunk_bounds(0, 4) == []


def test_map_chunks_keeps_gate_order_across_threads():
    def draw(start, stop):
        return gate_uniforms(9, "onset", 0, start, stop - start)

    serial = np.concatenate(map_chunks(draw, 1000, threads=1, chunk_gates=64))
    threaded = np.concatenate(map_chunks(draw, 1000, threads=8, chunk_gates=64))
    assert_array_equal(serial, threaded)
    assert_array_equal(serial, gate_uniforms(9, "onset", 0, 0, 1000))
