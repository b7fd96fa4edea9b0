import struct
import zlib

import numpy as np
import pytest

from lgtsm.checkpoint import Checkpoint, CheckpointError, from_bytes, load_checkpoint, save_checkpoint, to_bytes


def _ck():
    rng = np.random.default_rng(0)
    tensors = {
        "param/a": rng.standard_normal((2, 3)).astype(np.float32),
        "param/b": rng.standard_normal(4),
        "buffer/c": np.arange(5, dtype=np.int64),
        "mask": np.array([0, 1, 1], np.uint8),
    }
    return Checkpoint("pretrain", 7, tensors, {"config": {"seed": 0}, "note": "x"})


def test_round_trip_preserves_everything(tmp_path):
    ck = _ck()
    save_checkpoint(tmp_path / "a.ckpt", ck)
    back = load_checkpoint(tmp_path / "a.ckpt")
    assert back == ck
    assert back.tensors["param/a"].dtype == np.float32


def test_save_load_save_is_byte_identical(tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", _ck())
    save_checkpoint(tmp_path / "b.ckpt", load_checkpoint(tmp_path / "a.ckpt"))
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_layout_starts_with_magic_version_and_header_length():
    blob = to_bytes(_ck())
    assert blob[:8] == b"LGTSMCK1"
    (n,) = struct.unpack_from("<I", blob, 8)
    assert blob[12 : 12 + n].startswith(b"{")
    assert struct.unpack_from("<I", blob, len(blob) - 4)[0] == zlib.crc32(blob[:-4])


def test_flipped_payload_byte_names_the_tensor():
    blob = bytearray(to_bytes(_ck()))
    blob[-5] ^= 0xFF  # last payload byte, just before the trailing CRC
    with pytest.raises(CheckpointError, match="CRC mismatch in tensor 'param/b'"):
        from_bytes(bytes(blob))


def test_flipped_header_byte_is_detected():
    blob = bytearray(to_bytes(_ck()))
    blob[20] ^= 0x01
    with pytest.raises(CheckpointError, match="CRC mismatch"):
        from_bytes(bytes(blob))


def test_bad_magic_version_and_truncation():
    blob = to_bytes(_ck())
    with pytest.raises(CheckpointError, match="magic"):
        from_bytes(b"XXXXXXX" + blob[7:])
    with pytest.raises(CheckpointError, match="unsupported checkpoint version"):
        from_bytes(blob[:7] + b"9" + blob[8:])
    with pytest.raises(CheckpointError, match="truncated"):
        from_bytes(blob[:30])


def test_unsupported_dtype_is_refused():
    with pytest.raises((CheckpointError, ValueError)):
        to_bytes(Checkpoint("pretrain", 0, {"x": np.zeros(2, np.complex64)}, {}))
