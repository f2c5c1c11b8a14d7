import struct

import numpy as np
import pytest

from wmark.artifact import (
    ARCH_TAG,
    MAGIC,
    ModelArtifact,
    artifact_model,
    load_model,
    make_artifact,
    save_model,
)
from wmark.errors import CorruptArtifactError, FormatError
from wmark.verifier import init_params
from wmark.watermark import init_watermark


def build(seed=0, shape=(3, 16, 16)):
    return make_artifact(init_params(seed), init_watermark(shape, 0.1, 0.01, seed))


class TestRoundTrip:
    def test_bytes_identical(self, tmp_path):
        art = build()
        p1, p2 = tmp_path / "a.rawm", tmp_path / "b.rawm"
        save_model(art, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_values_preserved(self, tmp_path):
        art = build(seed=3)
        path = tmp_path / "m.rawm"
        save_model(art, path)
        back = load_model(path)
        assert back.channels == 3 and back.height == 16 and back.width == 16
        assert back.c1 == art.c1 and back.c2 == art.c2
        assert back.arch_tag == ARCH_TAG
        assert np.array_equal(back.u, art.u)
        assert np.array_equal(back.v, art.v)
        for (_, a), (_, b) in zip(back.params.arrays(), art.params.arrays()):
            assert np.array_equal(a, b)

    def test_watermark_payload_lengths_for_64(self, tmp_path):
        # header 3x64x64 declares 3*64*64 = 12288 values per watermark array,
        # 24576 across the pair
        art = build(shape=(3, 64, 64))
        path = tmp_path / "m.rawm"
        save_model(art, path)
        blob = path.read_bytes()
        pos = 4 + 4
        (taglen,) = struct.unpack_from("<I", blob, pos)
        pos += 4 + taglen + 12 + 16
        (len_u,) = struct.unpack_from("<I", blob, pos)
        pos += 4 + len_u * 4
        (len_v,) = struct.unpack_from("<I", blob, pos)
        assert len_u == 12288 and len_v == 12288
        assert len_u + len_v == 24576

    def test_model_reconstruction(self, tmp_path):
        art = build(seed=5)
        params, wm = artifact_model(art)
        assert wm.shape == (3, 16, 16)
        assert wm.c1 == art.c1
        assert params.dtype == np.float32


class TestCorruption:
    def test_payload_bitflip_detected(self, tmp_path):
        path = tmp_path / "m.rawm"
        save_model(build(), path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF  # middle of the payload
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptArtifactError):
            load_model(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.rawm"
        save_model(build(), path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"JUNK"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            load_model(path)

    def test_unknown_version(self, tmp_path):
        path = tmp_path / "m.rawm"
        save_model(build(), path)
        blob = bytearray(path.read_bytes())
        struct.pack_into("<I", blob, 4, 99)
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            load_model(path)

    def test_header_payload_mismatch(self, tmp_path):
        path = tmp_path / "m.rawm"
        art = build()
        save_model(art, path)
        blob = bytearray(path.read_bytes())
        # enlarge the declared width; payload lengths no longer match
        pos = 8
        (taglen,) = struct.unpack_from("<I", blob, pos)
        struct.pack_into("<I", blob, pos + 4 + taglen + 8, 999)
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            load_model(path)

    def test_float32_payload(self, tmp_path):
        # training in float64 still lands on the 32-bit wire format
        art = build()
        assert art.u.dtype == np.float32
        assert art.params.conv1_w.dtype == np.float32
