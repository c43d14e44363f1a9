"""On-disk formats: .sgt tensors, .sgc checkpoints, JSON manifests.

.sgt layout (all integers little-endian):
    magic "SGLT" | version u8 = 1 | dtype u8 = 0 (float32 LE) |
    rank u8 | dims u32 x rank | row-major float32 payload

.sgc layout:
    magic "SGLC" | version u8 = 1 | config digest u64 (FNV-1a of the
    canonical config text) | tensor count u32 |
    repeat: name length u16 | UTF-8 name | embedded .sgt record

Checkpoints are accompanied by a sidecar "<name>.json" echoing the exact
resolved configuration; loaders recompute the digest from it and refuse
mismatches.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

SGT_MAGIC = b"SGLT"
SGC_MAGIC = b"SGLC"
FORMAT_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def canonical_json(obj) -> str:
    """Key-sorted, separator-fixed JSON used for digests and echo files."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sgt_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f4")
    header = SGT_MAGIC + struct.pack(
        "<BBB", FORMAT_VERSION, 0, arr.ndim
    ) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()  # tobytes() is C-order for any layout


def write_sgt(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(sgt_bytes(arr))


def _parse_sgt(buf: bytes, offset: int, where: str) -> tuple[np.ndarray, int]:
    if buf[offset : offset + 4] != SGT_MAGIC:
        raise ValidationError(f"{where}: bad tensor magic")
    version, dtype, rank = struct.unpack_from("<BBB", buf, offset + 4)
    if version != FORMAT_VERSION:
        raise ValidationError(f"{where}: unsupported tensor version {version}")
    if dtype != 0:
        raise ValidationError(f"{where}: unsupported dtype byte {dtype}")
    pos = offset + 7
    dims = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    end = pos + 4 * count
    if end > len(buf):
        raise ValidationError(f"{where}: truncated tensor payload")
    arr = np.frombuffer(buf[pos:end], dtype="<f4").reshape(dims).copy()
    return arr, end


def read_sgt(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = _parse_sgt(buf, 0, str(path))
    if end != len(buf):
        raise ValidationError(f"{path}: {len(buf) - end} trailing bytes")
    return arr


def write_checkpoint(
    path: str | Path, digest: int, tensors: dict[str, np.ndarray]
) -> None:
    """Write a named-tensor archive; entries are stored name-sorted."""
    parts = [
        SGC_MAGIC,
        struct.pack("<B", FORMAT_VERSION),
        struct.pack("<Q", digest & 0xFFFFFFFFFFFFFFFF),
        struct.pack("<I", len(tensors)),
    ]
    for name in sorted(tensors):
        enc = name.encode("utf-8")
        parts.append(struct.pack("<H", len(enc)))
        parts.append(enc)
        parts.append(sgt_bytes(tensors[name]))
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path: str | Path) -> tuple[int, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != SGC_MAGIC:
        raise ValidationError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<B", buf, 4)
    if version != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    (digest,) = struct.unpack_from("<Q", buf, 5)
    (count,) = struct.unpack_from("<I", buf, 13)
    pos = 17
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        tensors[name], pos = _parse_sgt(buf, pos, f"{path}[{name}]")
    if pos != len(buf):
        raise ValidationError(f"{path}: {len(buf) - pos} trailing bytes")
    return digest, tensors


def range_file(index: int) -> str:
    return f"{index:06d}.range.sgt"


def label_file(index: int) -> str:
    return f"{index:06d}.label.sgt"


MANIFEST_NAME = "manifest.json"


def write_manifest(dir_path: str | Path, manifest: dict) -> None:
    (Path(dir_path) / MANIFEST_NAME).write_text(canonical_json(manifest) + "\n")


def read_manifest(dir_path: str | Path) -> dict:
    path = Path(dir_path) / MANIFEST_NAME
    if not path.exists():
        raise ValidationError(f"{dir_path}: no {MANIFEST_NAME} found")
    manifest = json.loads(path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"{path}: unrecognized format_version {manifest.get('format_version')!r}"
        )
    return manifest


class Dataset:
    """A directory of NNNNNN.range.sgt / NNNNNN.label.sgt pairs + manifest.

    strict=False skips the existence check so callers that tolerate
    incomplete samples (translation skips them with a warning) can load.
    """

    def __init__(self, dir_path: str | Path, strict: bool = True):
        self.dir = Path(dir_path)
        self.manifest = read_manifest(self.dir)
        if strict:
            for entry in self.manifest["samples"]:
                for key in ("range", "label"):
                    if not (self.dir / entry[key]).exists():
                        raise ValidationError(
                            f"{self.dir}: listed file {entry[key]} is missing"
                        )

    def __len__(self) -> int:
        return len(self.manifest["samples"])

    @property
    def num_classes(self) -> int:
        return int(self.manifest["num_classes"])

    def load_arrays(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(range float32 (H,W), labels int32 (H,W)) for sample i."""
        entry = self.manifest["samples"][i]
        rng = read_sgt(self.dir / entry["range"])
        lab = read_sgt(self.dir / entry["label"]).astype(np.int32)
        if rng.shape != lab.shape or rng.ndim != 2:
            raise ValidationError(f"{self.dir}: sample {i} has mismatched shapes")
        return rng, lab
