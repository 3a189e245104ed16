"""File formats: PGM images, codes CSV, NDV1 tensors, JSON artifacts.

Formats are chosen for language neutrality and bit exactness:

* images and masks: binary PGM (P5, maxval 255), pixel = floor(v*255 + 0.5);
* tabular codes: CSV with decimals canonicalized to 9 significant digits
  (write -> read -> write is a byte fixpoint);
* bulk code matrices: "NDV1", a 16-byte-header little-endian row-major
  tensor format (magic, dtype code, rank, dims) supporting rank <= 2;
* graphs, plans, traces, reports, manifests: JSON with full-precision
  floats (Python's shortest-round-trip repr).

All writers go through an atomic write-temp-then-rename.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from cfseg.core import CS_DIM, ClassLabel, ContractError, Dataset, SampleRecord


class FormatError(ValueError):
    """Malformed input file; carries enough context to locate the defect."""


# ---------------------------------------------------------------------------
# atomic writes

def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# PGM (P5, 8-bit)

def image_to_pgm_bytes(image: np.ndarray) -> bytes:
    arr = np.asarray(image, dtype=np.float64)
    q = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    return header + q.tobytes()


def mask_to_pgm_bytes(mask: np.ndarray) -> bytes:
    arr = np.asarray(mask, dtype=np.uint8) * 255
    header = f"P5\n{mask.shape[1]} {mask.shape[0]}\n255\n".encode("ascii")
    return header + arr.tobytes()


def write_pgm_image(path: str | Path, image: np.ndarray) -> None:
    atomic_write_bytes(path, image_to_pgm_bytes(image))


def write_pgm_mask(path: str | Path, mask: np.ndarray) -> None:
    atomic_write_bytes(path, mask_to_pgm_bytes(mask))


def _parse_pgm(payload: bytes, path) -> np.ndarray:
    # Token-wise header parse: P5, width, height, maxval, single whitespace,
    # then the raw payload.  Comments (# ...) are accepted on read.
    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(payload) and payload[pos : pos + 1].isspace():
            pos += 1
        if pos < len(payload) and payload[pos : pos + 1] == b"#":
            while pos < len(payload) and payload[pos] != 0x0A:
                pos += 1
            return next_token()
        start = pos
        while pos < len(payload) and not payload[pos : pos + 1].isspace():
            pos += 1
        return payload[start:pos]

    magic = next_token()
    if magic != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    data = payload[pos : pos + width * height]
    if len(data) != width * height:
        raise FormatError(f"{path}: truncated PGM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width)


def read_pgm_image(path: str | Path) -> np.ndarray:
    raw = _parse_pgm(Path(path).read_bytes(), path)
    return (raw.astype(np.float32) / np.float32(255.0)).astype(np.float32)


def read_pgm_mask(path: str | Path) -> np.ndarray:
    raw = _parse_pgm(Path(path).read_bytes(), path)
    return (raw > 127).astype(np.uint8)


# ---------------------------------------------------------------------------
# canonical decimal serialization

def format_float(x: float) -> str:
    """9-significant-digit canonical decimal; the on-disk value."""
    return f"{float(x):.9g}"


# ---------------------------------------------------------------------------
# codes CSV: id,label,cs_0..cs_7,is_0..is_{k-1}

def codes_csv_header(is_dim: int) -> str:
    cols = ["id", "label"]
    cols += [f"cs_{i}" for i in range(CS_DIM)]
    cols += [f"is_{i}" for i in range(is_dim)]
    return ",".join(cols)


def write_codes_csv(path: str | Path, dataset: Dataset, is_dim: int | None = None) -> None:
    if is_dim is None:
        is_dim = dataset.records[0].is_code.shape[0] if len(dataset) else 0
    lines = [codes_csv_header(is_dim)]
    for rec in dataset:
        vals = [rec.id, rec.label.value]
        vals += [format_float(v) for v in rec.cs]
        vals += [format_float(v) for v in rec.is_code]
        lines.append(",".join(vals))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_codes_csv(path: str | Path, split: str = "test") -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}:1:1: empty codes CSV")
    header = lines[0].split(",")
    if header[:2] != ["id", "label"]:
        raise FormatError(f"{path}:1:1: codes CSV must start with id,label")
    cs_cols = [c for c in header if c.startswith("cs_")]
    is_cols = [c for c in header if c.startswith("is_")]
    if len(cs_cols) != CS_DIM:
        raise FormatError(f"{path}:1:1: expected {CS_DIM} cs_ columns, got {len(cs_cols)}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise FormatError(f"{path}:{lineno}:1: expected {len(header)} fields, got {len(parts)}")
        try:
            cs = [float(v) for v in parts[2 : 2 + CS_DIM]]
            is_code = [float(v) for v in parts[2 + CS_DIM :]]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}:1: non-numeric code value") from exc
        try:
            label = ClassLabel.parse(parts[1])
            records.append(SampleRecord(id=parts[0], label=label, cs=cs, is_code=is_code))
        except ContractError as exc:
            raise FormatError(f"{path}:{lineno}:1: {exc}") from exc
    return Dataset(records=records, split=split)


# ---------------------------------------------------------------------------
# embedding CSV: id,x,y

def write_embedding_csv(path: str | Path, ids: list[str], coords: np.ndarray) -> None:
    lines = ["id,x,y"]
    for rid, (x, y) in zip(ids, np.asarray(coords, dtype=np.float64)):
        lines.append(f"{rid},{format_float(x)},{format_float(y)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_embedding_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "id,x,y":
        raise FormatError(f"{path}:1:1: expected header id,x,y")
    ids, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}:1: expected 3 fields")
        try:
            rows.append((float(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}:1: non-numeric coordinate") from exc
        ids.append(parts[0])
    return ids, np.asarray(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# NDV1 binary tensors

_NDV1_MAGIC = b"NDV1"
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("<u1")}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


def write_ndv1(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    dt = np.dtype(arr.dtype).newbyteorder("<")
    if dt not in _DTYPE_CODES:
        arr = arr.astype(np.float64)
        dt = np.dtype("<f8")
    if arr.ndim > 2:
        raise FormatError("NDV1 supports rank <= 2")
    dims = list(arr.shape) + [0] * (2 - arr.ndim)
    header = _NDV1_MAGIC + struct.pack("<BBH", _DTYPE_CODES[dt], arr.ndim, 0)
    header += struct.pack("<II", dims[0], dims[1])
    atomic_write_bytes(path, header + arr.astype(dt).tobytes())


def read_ndv1(path: str | Path) -> np.ndarray:
    payload = Path(path).read_bytes()
    if len(payload) < 16 or payload[:4] != _NDV1_MAGIC:
        raise FormatError(f"{path}: not an NDV1 tensor")
    dtype_code, rank, _ = struct.unpack("<BBH", payload[4:8])
    d0, d1 = struct.unpack("<II", payload[8:16])
    if dtype_code not in _DTYPES:
        raise FormatError(f"{path}: unknown NDV1 dtype code {dtype_code}")
    dt = _DTYPES[dtype_code]
    shape = (d0, d1)[:rank]
    count = int(np.prod(shape)) if rank else 1
    data = np.frombuffer(payload[16:], dtype=dt, count=count)
    return data.reshape(shape).copy()


# ---------------------------------------------------------------------------
# JSON artifacts

def dump_json(path: str | Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path: str | Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
