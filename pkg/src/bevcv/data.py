"""Dataset manifests and the binary embedding / weights containers.

BEVC (embeddings), all little-endian::

    magic "BEVC" | version u16 | dim u32 | count u64 | count x id u64 | count*dim x f32

BVWT (named tensors)::

    magic "BVWT" | version u16 | tensor count u32 |
    per tensor: name length u16, UTF-8 name, rank u8, rank x dim u32, f32 data
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DimensionMismatch, DuplicateId, DuplicateTensorName, MalformedFile, ParseError

EMBEDDING_MAGIC = b"BEVC"
EMBEDDING_VERSION = 1
WEIGHTS_MAGIC = b"BVWT"
WEIGHTS_VERSION = 1

_U64_MAX = (1 << 64) - 1


@dataclass(frozen=True)
class ManifestEntry:
    id: int
    pov_path: str
    aerial_path: str
    yaw_deg: float
    lat: float | None = None
    lon: float | None = None

    def to_json(self) -> dict:
        d = {"id": self.id, "pov": self.pov_path, "aerial": self.aerial_path, "yaw_deg": self.yaw_deg}
        if self.lat is not None:
            d["lat"] = self.lat
        if self.lon is not None:
            d["lon"] = self.lon
        return d


def _entry_from_json(obj, lineno: int) -> ManifestEntry:
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", lineno)
    for key in ("id", "pov", "aerial", "yaw_deg"):
        if key not in obj:
            raise ParseError(f"missing field {key!r}", lineno)
    ident = obj["id"]
    if isinstance(ident, bool) or not isinstance(ident, int) or not 0 <= ident <= _U64_MAX:
        raise ParseError(f"id must be an unsigned 64-bit integer, got {ident!r}", lineno)
    if not isinstance(obj["pov"], str) or not isinstance(obj["aerial"], str):
        raise ParseError("pov and aerial must be strings", lineno)
    yaw = obj["yaw_deg"]
    if isinstance(yaw, bool) or not isinstance(yaw, (int, float)) or not 0 <= yaw < 360:
        raise ParseError(f"yaw_deg must be in [0, 360), got {yaw!r}", lineno)
    lat, lon = obj.get("lat"), obj.get("lon")
    if lat is not None and not (isinstance(lat, (int, float)) and -90 <= lat <= 90):
        raise ParseError(f"lat out of range: {lat!r}", lineno)
    if lon is not None and not (isinstance(lon, (int, float)) and -180 <= lon <= 180):
        raise ParseError(f"lon out of range: {lon!r}", lineno)
    extra = set(obj) - {"id", "pov", "aerial", "yaw_deg", "lat", "lon"}
    if extra:
        raise ParseError(f"unknown field(s) {sorted(extra)}", lineno)
    return ManifestEntry(ident, obj["pov"], obj["aerial"], yaw, lat, lon)


def parse_manifest(path) -> list[ManifestEntry]:
    """Read a JSON Lines manifest; blank lines are skipped."""
    entries, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            entry = _entry_from_json(obj, lineno)
            if entry.id in seen:
                raise DuplicateId(entry.id, f"line {lineno}: duplicate id {entry.id}")
            seen.add(entry.id)
            entries.append(entry)
    return entries


def write_manifest(path, entries: Iterable[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_json()) + "\n")


# --------------------------------------------------------------------------- embeddings


def encode_embeddings(ids, vectors) -> bytes:
    ids = np.asarray(list(ids), dtype=np.uint64) if len(ids) else np.zeros(0, np.uint64)
    vec = np.asarray(vectors, dtype=np.float32)
    if vec.ndim != 2:
        if vec.size == 0:
            vec = vec.reshape(0, 0)
        else:
            raise DimensionMismatch(f"vectors must be (count, dim), got {vec.shape}")
    if len(ids) != vec.shape[0]:
        raise DimensionMismatch(f"{len(ids)} ids for {vec.shape[0]} vectors")
    header = EMBEDDING_MAGIC + struct.pack("<HIQ", EMBEDDING_VERSION, vec.shape[1], len(ids))
    return header + ids.astype("<u8").tobytes() + vec.astype("<f4").tobytes()


def decode_embeddings(raw: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(raw) < 18 or raw[:4] != EMBEDDING_MAGIC:
        raise MalformedFile("not a BEVC embedding file (bad magic)")
    version, dim, count = struct.unpack_from("<HIQ", raw, 4)
    if version != EMBEDDING_VERSION:
        raise MalformedFile(f"unsupported BEVC version {version} (expected {EMBEDDING_VERSION})")
    need = 18 + count * 8 + count * dim * 4
    if len(raw) != need:
        raise MalformedFile(f"BEVC length {len(raw)} does not match header (expected {need})")
    ids = np.frombuffer(raw, dtype="<u8", count=count, offset=18).astype(np.uint64)
    vec = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=18 + count * 8)
    return ids, vec.astype(np.float32).reshape(count, dim)


def write_embeddings(path, ids, vectors) -> None:
    Path(path).write_bytes(encode_embeddings(ids, vectors))


def read_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    return decode_embeddings(Path(path).read_bytes())


# --------------------------------------------------------------------------- weights


def _weight_items(weights):
    items = list(weights.items()) if isinstance(weights, Mapping) else list(weights)
    seen = set()
    for name, _ in items:
        if name in seen:
            raise DuplicateTensorName(name)
        seen.add(name)
    return items


def encode_weights(weights) -> bytes:
    """``weights`` is a mapping or a sequence of (name, array) pairs."""
    items = _weight_items(weights)
    parts = [WEIGHTS_MAGIC, struct.pack("<HI", WEIGHTS_VERSION, len(items))]
    for name, arr in items:
        arr = np.asarray(arr, dtype=np.float32)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF or arr.ndim > 255:
            raise MalformedFile(f"tensor {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def decode_weights(raw: bytes) -> dict[str, np.ndarray]:
    if len(raw) < 10 or raw[:4] != WEIGHTS_MAGIC:
        raise MalformedFile("not a BVWT weights file (bad magic)")
    version, count = struct.unpack_from("<HI", raw, 4)
    if version != WEIGHTS_VERSION:
        raise MalformedFile(f"unsupported BVWT version {version} (expected {WEIGHTS_VERSION})")
    pos = 10
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            if pos + nlen > len(raw):
                raise MalformedFile("BVWT truncated in tensor name")
            name = raw[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            n = math.prod(dims)
            if pos + 4 * n > len(raw):
                raise MalformedFile(f"BVWT truncated in tensor {name!r}")
            if name in out:
                raise DuplicateTensorName(name)
            out[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).astype(np.float32).reshape(dims)
            pos += 4 * n
    except struct.error:
        raise MalformedFile("BVWT truncated") from None
    except UnicodeDecodeError:
        raise MalformedFile("BVWT tensor name is not UTF-8") from None
    if pos != len(raw):
        raise MalformedFile(f"BVWT has {len(raw) - pos} trailing bytes")
    return out


def write_weights(path, weights) -> None:
    Path(path).write_bytes(encode_weights(weights))


def read_weights(path) -> dict[str, np.ndarray]:
    return decode_weights(Path(path).read_bytes())
