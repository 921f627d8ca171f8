"""Unit tests for the DLPS binary logits records."""

import numpy as np
import pytest

from errors import LogitsFormatError
from logits_io import HEADER, encode_record, read_logits, read_records, write_records


def test_header_is_seventeen_bytes():
    assert HEADER.itemsize == 17


def test_record_layout(tmp_path):
    table = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    path = write_records(tmp_path / "logits.dlps", [table])
    raw = path.read_bytes()
    assert raw[:4] == b"DLPS"
    assert raw[4] == 1
    assert len(raw) == 17 + 4 * 24
    np.testing.assert_array_equal(read_logits(path), table.astype(np.float64))


def test_two_dimensional_table_becomes_single_step(tmp_path):
    path = write_records(tmp_path / "one.dlps", [np.ones((3, 2))])
    assert read_logits(path).shape == (1, 3, 2)


def test_multiple_records(tmp_path):
    path = write_records(tmp_path / "multi.dlps", [np.zeros((1, 2, 2)), np.ones((1, 3, 1))])
    records = read_records(path)
    assert [r.shape for r in records] == [(1, 2, 2), (1, 3, 1)]
    with pytest.raises(LogitsFormatError):
        read_logits(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.dlps"
    path.write_bytes(b"XXXX" + encode_record(np.zeros((1, 1, 1)))[4:])
    with pytest.raises(LogitsFormatError, match="magic"):
        read_records(path)


def test_bad_version(tmp_path):
    raw = bytearray(encode_record(np.zeros((1, 1, 1))))
    raw[4] = 2
    path = tmp_path / "v2.dlps"
    path.write_bytes(bytes(raw))
    with pytest.raises(LogitsFormatError, match="version"):
        read_records(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "short.dlps"
    path.write_bytes(encode_record(np.zeros((1, 4, 4)))[:-4])
    with pytest.raises(LogitsFormatError, match="short"):
        read_records(path)


def test_truncated_header_and_empty_file(tmp_path):
    path = tmp_path / "tiny.dlps"
    path.write_bytes(b"DLPS\x01")
    with pytest.raises(LogitsFormatError, match="header"):
        read_records(path)
    path.write_bytes(b"")
    with pytest.raises(LogitsFormatError, match="no records"):
        read_records(path)


def test_encode_rejects_bad_rank():
    with pytest.raises(LogitsFormatError):
        encode_record(np.zeros(3))
