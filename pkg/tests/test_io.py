import numpy as np
import pytest
from numpy.testing import assert_array_equal

from spadsim.constants import DECISION_HEADER, GROUND_TRUTH_HEADER
from spadsim.schemas import AdcConfig, CompensatorConfig
from spadsim.services.compensator import process_stream
from spadsim.services.sigmodel import FrameStream, simulate_gate_train
from spadsim.utils.io import (
    ArtifactFormatError,
    format_value,
    read_frames,
    read_table,
    write_decisions,
    write_frames,
    write_ground_truth,
)
from tests.conftest import make_scenario


@pytest.mark.parametrize("bits", [8, 12])
def test_frames_survive_write_and_read(tmp_path, bits):
    scenario = make_scenario(n_gates=300, adc=AdcConfig(bits=bits))
    frames = simulate_gate_train(scenario).frames[0]
    path = write_frames(tmp_path / "frames.bin", frames)
    expected_size = 24 + frames.codes.size * (1 if bits <= 8 else 2)
    assert path.stat().st_size == expected_size
    loaded = read_frames(path)
    assert loaded.bits == bits
    assert_array_equal(loaded.codes, frames.codes)
    assert loaded.checksum() == frames.checksum()


def test_read_frames_rejects_foreign_files(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTFRAME" + bytes(16))
    with pytest.raises(ArtifactFormatError):
        read_frames(bad)
    truncated = tmp_path / "short.bin"
    write_frames(truncated, FrameStream(channel=0, codes=np.zeros((4, 16), dtype=np.uint16), bits=8))
    truncated.write_bytes(truncated.read_bytes()[:-3])
    with pytest.raises(ArtifactFormatError):
        read_frames(truncated)


def test_ground_truth_and_decision_tables(tmp_path):
    scenario = make_scenario(n_gates=500, device={"efficiency_eta": 0.3, "dark_prob_per_gate": 0.02})
    result = simulate_gate_train(scenario)
    decisions, _ = process_stream(result.frames[0], CompensatorConfig(), scenario.adc)

    truth_rows = read_table(write_ground_truth(tmp_path / "truth.csv", result.truth[0]))
    decision_rows = read_table(write_decisions(tmp_path / "decisions.csv", [decisions]))
    assert list(truth_rows[0]) == GROUND_TRUTH_HEADER
    assert list(decision_rows[0]) == DECISION_HEADER
    assert len(truth_rows) == len(decision_rows) == 500
    assert sum(row["avalanche"] == "1" for row in truth_rows) == int(result.truth[0].avalanche.sum())
    assert {row["cause"] for row in truth_rows} <= {"none", "photon", "dark", "afterpulse", "crosstalk"}
    for row, record in zip(truth_rows, result.truth[0].records()):
        assert row["cause"] == record.cause
        assert int(row["gate_index"]) == record.gate_index
        assert row["avalanche"] == ("1" if record.avalanche else "0")


def test_format_value():
    assert format_value(True) == "1"
    assert format_value(np.int64(7)) == "7"
    assert format_value(0.1) == "0.1"
    assert format_value(None) == ""
