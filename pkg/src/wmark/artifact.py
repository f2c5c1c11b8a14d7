"""Bit-exact single-file persistence for the watermark pair plus verifier.

Detection requires both halves, so they travel together in one ``.rawm``
file. Layout, all little-endian:

    magic   4 bytes  b"RAWM"
    version u32      currently 1
    tag     u32 length + that many ASCII bytes (architecture tag)
    C,H,W   u32 each
    c1,c2   f64 each
    payload arrays in order: u, v, conv1_w, conv1_b, conv2_w, conv2_b,
            conv3_w, conv3_b, dense_w, dense_b; each a u32 element count
            followed by count f32 values
    crc     u32 CRC-32 of the payload bytes

Loading verifies the magic, version, CRC, and that every array length matches
the header dimensions and the fixed architecture.
"""

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import CorruptArtifactError, DimensionError, FormatError
from .verifier import VerifierParams, expected_shapes
from .watermark import WatermarkPair

MAGIC = b"RAWM"
VERSION = 1
ARCH_TAG = "conv16-32-64/gap/dense"

_PARAM_ORDER = (
    "conv1_w", "conv1_b", "conv2_w", "conv2_b",
    "conv3_w", "conv3_b", "dense_w", "dense_b",
)


@dataclass
class ModelArtifact:
    channels: int
    height: int
    width: int
    c1: float
    c2: float
    u: np.ndarray              # float32, (C, H, W)
    v: np.ndarray              # float32, (C, H, W)
    params: VerifierParams     # float32 arrays
    version: int = VERSION
    arch_tag: str = ARCH_TAG


def make_artifact(params: VerifierParams, wm: WatermarkPair) -> ModelArtifact:
    """Snapshot a trained model; array data is rounded to 32-bit floats."""
    c, h, w = wm.shape
    return ModelArtifact(
        channels=c,
        height=h,
        width=w,
        c1=float(wm.c1),
        c2=float(wm.c2),
        u=wm.u.astype(np.float32),
        v=wm.v.astype(np.float32),
        params=params.as_dtype(np.float32),
    )


def artifact_model(art: ModelArtifact) -> tuple[VerifierParams, WatermarkPair]:
    """Reconstruct the in-memory model from an artifact."""
    wm = WatermarkPair(
        v=art.v.astype(np.float64), u=art.u.astype(np.float64), c1=art.c1, c2=art.c2
    )
    return art.params, wm


def save_model(art: ModelArtifact, path) -> None:
    if art.u.shape != (art.channels, art.height, art.width) or art.v.shape != art.u.shape:
        raise DimensionError("artifact watermark shapes do not match its header")
    payload = bytearray()
    for arr in (art.u, art.v) + tuple(getattr(art.params, n) for n in _PARAM_ORDER):
        flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
        payload += struct.pack("<I", flat.size)
        payload += flat.tobytes()
    tag = art.arch_tag.encode("ascii")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", art.version))
        f.write(struct.pack("<I", len(tag)))
        f.write(tag)
        f.write(struct.pack("<III", art.channels, art.height, art.width))
        f.write(struct.pack("<dd", art.c1, art.c2))
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(bytes(payload))))


def load_model(path) -> ModelArtifact:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic in {path}: not a model artifact")
    pos = 4
    (version,) = struct.unpack_from("<I", blob, pos); pos += 4
    if version != VERSION:
        raise FormatError(f"unrecognized artifact version {version} in {path}")
    (taglen,) = struct.unpack_from("<I", blob, pos); pos += 4
    tag = blob[pos : pos + taglen].decode("ascii"); pos += taglen
    c, h, w = struct.unpack_from("<III", blob, pos); pos += 12
    c1, c2 = struct.unpack_from("<dd", blob, pos); pos += 16

    payload = blob[pos:-4]
    (crc_stored,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(payload) != crc_stored:
        raise CorruptArtifactError(f"payload CRC mismatch in {path}")

    arrays, cursor = [], 0
    for _ in range(2 + len(_PARAM_ORDER)):
        if cursor + 4 > len(payload):
            raise FormatError(f"truncated payload in {path}")
        (count,) = struct.unpack_from("<I", payload, cursor); cursor += 4
        nbytes = count * 4
        if cursor + nbytes > len(payload):
            raise FormatError(f"truncated payload in {path}")
        arrays.append(np.frombuffer(payload, dtype="<f4", count=count, offset=cursor).copy())
        cursor += nbytes
    if cursor != len(payload):
        raise FormatError(f"trailing bytes in payload of {path}")

    wm_size = c * h * w
    if arrays[0].size != wm_size or arrays[1].size != wm_size:
        raise FormatError(
            f"watermark payload length {arrays[0].size} does not match header "
            f"{c}x{h}x{w} in {path}"
        )
    u = arrays[0].reshape(c, h, w)
    v = arrays[1].reshape(c, h, w)

    shapes = expected_shapes()
    fields = {}
    for name, arr in zip(_PARAM_ORDER, arrays[2:]):
        want = shapes[name]
        if arr.size != int(np.prod(want)):
            raise FormatError(f"array {name} has {arr.size} values, expected {want} in {path}")
        fields[name] = arr.reshape(want)
    return ModelArtifact(
        channels=c, height=h, width=w, c1=c1, c2=c2, u=u, v=v,
        params=VerifierParams(**fields), version=version, arch_tag=tag,
    )
