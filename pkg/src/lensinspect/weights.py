"""Binary weight container for the detection network.

File layout (all integers little-endian, values float32 LE):

    magic    8 bytes  b"LENSWT01"
    payload:
        u32 format version (currently 1)
        u32 num_classes
        u32 reg_max
        u32 fused flag (0/1)
        u32 entry count
        per entry, sorted by name:
            u16 name length, then UTF-8 name
            u8 ndim, then u32 per dimension
            float32 data, C order
    crc32    u32 over the payload bytes

The sort makes serialization canonical: save -> load -> save is
byte-identical. See docs/weights-format.md for the normative spec.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"LENSWT01"
FORMAT_VERSION = 1


class ModelError(RuntimeError):
    """Problem with the model artifact (weights or network binding)."""


class WeightFormatError(ModelError):
    """Weight file is not in the expected format."""


class WeightVersionError(WeightFormatError):
    """Weight file uses an unsupported format version."""


class WeightChecksumError(WeightFormatError):
    """Weight file payload fails its CRC (corrupt or truncated)."""


class WeightShapeError(ModelError):
    """A stored entry's shape disagrees with the network graph."""


class MissingWeightError(ModelError):
    """The network graph needs an entry the store does not have."""


@dataclass
class WeightStore:
    """Named float32 parameter entries plus model header metadata."""

    num_classes: int
    reg_max: int
    fused: bool = False
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.entries = {
            name: np.ascontiguousarray(arr, dtype=np.float32)
            for name, arr in self.entries.items()
        }

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.entries[name]
        except KeyError:
            raise MissingWeightError(f"weight store has no entry {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def parameter_count(self) -> int:
        """Total learned scalars; per-layer eps constants are excluded."""
        return sum(a.size for n, a in self.entries.items() if not n.endswith(".eps"))

    def payload_bytes(self) -> bytes:
        chunks = [struct.pack(
            "<5I", FORMAT_VERSION, self.num_classes, self.reg_max,
            int(self.fused), len(self.entries),
        )]
        for name in sorted(self.entries):
            arr = self.entries[name]
            encoded = name.encode("utf-8")
            chunks.append(struct.pack("<H", len(encoded)))
            chunks.append(encoded)
            chunks.append(struct.pack("<B", arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(arr.astype("<f4", copy=False).tobytes())
        return b"".join(chunks)

    def checksum(self) -> int:
        return zlib.crc32(self.payload_bytes()) & 0xFFFFFFFF


def save_weights(store: WeightStore, path) -> None:
    payload = store.payload_bytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(MAGIC + payload + struct.pack("<I", crc))


def load_weights(path) -> WeightStore:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ModelError(f"cannot read weight file {path}: {exc}") from exc
    if len(blob) < len(MAGIC) or blob[:len(MAGIC)] != MAGIC:
        raise WeightFormatError(
            f"{path}: bad magic, not a weight file (expected {MAGIC!r})"
        )
    if len(blob) < len(MAGIC) + 24:
        raise WeightChecksumError(f"{path}: file truncated, payload incomplete")
    payload, (crc,) = blob[len(MAGIC):-4], struct.unpack("<I", blob[-4:])
    actual = zlib.crc32(payload) & 0xFFFFFFFF
    if actual != crc:
        raise WeightChecksumError(
            f"{path}: checksum mismatch (stored {crc:#010x}, computed {actual:#010x})"
        )
    try:
        version, num_classes, reg_max, fused, count = struct.unpack_from("<5I", payload, 0)
        if version != FORMAT_VERSION:
            raise WeightVersionError(
                f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})"
            )
        offset = 20
        entries: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", payload, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(payload, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            entries[name] = arr.reshape(shape).copy()
        if offset != len(payload):
            raise WeightFormatError(f"{path}: {len(payload) - offset} trailing payload bytes")
    except struct.error as exc:
        raise WeightFormatError(f"{path}: malformed payload ({exc})") from exc
    return WeightStore(num_classes=num_classes, reg_max=reg_max,
                       fused=bool(fused), entries=entries)
