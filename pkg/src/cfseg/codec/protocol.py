"""The language-neutral codec file protocol.

A request directory holds ``request.csv`` with header ``id,op`` plus
per-op payload columns:

* ``decode``   — ``cs_0..cs_7,is_0..is_{k-1}``; response ``out/<id>.pgm``
  (P5, 8-bit, pixel = floor(v*255 + 0.5));
* ``encode``   — ``image`` (relative PGM path); response ``codes.csv``
  with ``id,cs_0..cs_7,is_0..is_{k-1}``;
* ``classify`` — ``image``; response ``probs.csv`` with ``id,p_abnormal``
  (decimal, 6 fractional digits).

The external command exits 0 on success.  Both sides of the bridge (the
client in `cfseg.codec.bridge`, servers such as the CLI ``codec``
subcommand or an external adapter) speak exactly this format.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from cfseg.core import CS_DIM
from cfseg.formats import (
    FormatError,
    atomic_write_text,
    format_float,
    read_pgm_image,
    write_pgm_image,
)

OPS = ("decode", "encode", "classify")
REQUEST_NAME = "request.csv"


def write_decode_request(request_dir: str | Path, ids: list[str],
                         cs_rows: np.ndarray, is_rows: np.ndarray) -> None:
    request_dir = Path(request_dir)
    request_dir.mkdir(parents=True, exist_ok=True)
    is_dim = int(np.asarray(is_rows).shape[1])
    header = ["id", "op"] + [f"cs_{i}" for i in range(CS_DIM)] + [f"is_{i}" for i in range(is_dim)]
    lines = [",".join(header)]
    for rid, cs, isc in zip(ids, cs_rows, is_rows):
        vals = [rid, "decode"]
        vals += [format_float(v) for v in cs]
        vals += [format_float(v) for v in isc]
        lines.append(",".join(vals))
    atomic_write_text(request_dir / REQUEST_NAME, "\n".join(lines) + "\n")


def write_image_request(request_dir: str | Path, op: str,
                        images: dict[str, np.ndarray]) -> None:
    if op not in ("encode", "classify"):
        raise ValueError(f"image request op must be encode or classify, got {op}")
    request_dir = Path(request_dir)
    (request_dir / "img").mkdir(parents=True, exist_ok=True)
    lines = ["id,op,image"]
    for rid in images:
        rel = f"img/{rid}.pgm"
        write_pgm_image(request_dir / rel, images[rid])
        lines.append(f"{rid},{op},{rel}")
    atomic_write_text(request_dir / REQUEST_NAME, "\n".join(lines) + "\n")


def read_request(request_dir: str | Path) -> tuple[str, list[dict]]:
    """Parse a request dir into (op, rows); rows carry numpy codes or images."""
    request_dir = Path(request_dir)
    path = request_dir / REQUEST_NAME
    if not path.exists():
        raise FormatError(f"{path}: missing request file")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}:1:1: empty request")
    header = lines[0].split(",")
    if header[:2] != ["id", "op"]:
        raise FormatError(f"{path}:1:1: request header must start with id,op")
    rows: list[dict] = []
    op_seen: str | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise FormatError(f"{path}:{lineno}:1: expected {len(header)} fields")
        row = dict(zip(header, parts))
        op = row["op"]
        if op not in OPS:
            raise FormatError(f"{path}:{lineno}:2: unknown op {op!r}")
        if op_seen is None:
            op_seen = op
        elif op != op_seen:
            raise FormatError(f"{path}:{lineno}:2: mixed ops in one request")
        if op == "decode":
            try:
                cs = np.array([float(row[f"cs_{i}"]) for i in range(CS_DIM)])
                is_cols = sorted(
                    (c for c in header if c.startswith("is_")),
                    key=lambda c: int(c.split("_")[1]),
                )
                isc = np.array([float(row[c]) for c in is_cols])
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}:1: bad decode row") from exc
            rows.append({"id": row["id"], "cs": cs, "is": isc})
        else:
            rel = row.get("image")
            if not rel:
                raise FormatError(f"{path}:{lineno}:1: missing image column")
            rows.append({"id": row["id"], "image": read_pgm_image(request_dir / rel)})
    if op_seen is None:
        raise FormatError(f"{path}: request has no rows")
    return op_seen, rows


def write_decode_response(request_dir: str | Path, images: dict[str, np.ndarray]) -> None:
    out = Path(request_dir) / "out"
    out.mkdir(parents=True, exist_ok=True)
    for rid, img in images.items():
        write_pgm_image(out / f"{rid}.pgm", img)


def read_decode_response(request_dir: str | Path, ids: list[str]) -> dict[str, np.ndarray]:
    out = Path(request_dir) / "out"
    images = {}
    for rid in ids:
        path = out / f"{rid}.pgm"
        if not path.exists():
            raise FormatError(f"{path}: missing decode response image")
        images[rid] = read_pgm_image(path)
    return images


def write_codes_response(request_dir: str | Path,
                         codes: dict[str, tuple[np.ndarray, np.ndarray]]) -> None:
    first = next(iter(codes.values()), None)
    is_dim = 0 if first is None else int(np.asarray(first[1]).shape[0])
    header = ["id"] + [f"cs_{i}" for i in range(CS_DIM)] + [f"is_{i}" for i in range(is_dim)]
    lines = [",".join(header)]
    for rid, (cs, isc) in codes.items():
        vals = [rid] + [format_float(v) for v in cs] + [format_float(v) for v in isc]
        lines.append(",".join(vals))
    atomic_write_text(Path(request_dir) / "codes.csv", "\n".join(lines) + "\n")


def read_codes_response(request_dir: str | Path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    path = Path(request_dir) / "codes.csv"
    if not path.exists():
        raise FormatError(f"{path}: missing encode response")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    header = lines[0].split(",")
    n_is = sum(1 for c in header if c.startswith("is_"))
    out = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 1 + CS_DIM + n_is:
            raise FormatError(f"{path}:{lineno}:1: wrong field count")
        try:
            cs = np.array([float(v) for v in parts[1 : 1 + CS_DIM]])
            isc = np.array([float(v) for v in parts[1 + CS_DIM :]])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}:1: non-numeric code") from exc
        out[parts[0]] = (cs, isc)
    return out


def write_probs_response(request_dir: str | Path, probs: dict[str, float]) -> None:
    lines = ["id,p_abnormal"]
    for rid, p in probs.items():
        lines.append(f"{rid},{p:.6f}")
    atomic_write_text(Path(request_dir) / "probs.csv", "\n".join(lines) + "\n")


def read_probs_response(request_dir: str | Path) -> dict[str, float]:
    path = Path(request_dir) / "probs.csv"
    if not path.exists():
        raise FormatError(f"{path}: missing classify response")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or lines[0] != "id,p_abnormal":
        raise FormatError(f"{path}:1:1: expected header id,p_abnormal")
    out = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}:1: expected 2 fields")
        try:
            out[parts[0]] = float(parts[1])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}:2: non-numeric probability") from exc
    return out


def serve_request(request_dir: str | Path, codec) -> None:
    """Answer one request directory with any codec object.

    Used by the CLI ``codec`` subcommand to expose the synthetic codec to
    external processes over the protocol.
    """
    op, rows = read_request(request_dir)
    if op == "decode":
        images = {r["id"]: codec.decode(r["cs"], r["is"]) for r in rows}
        write_decode_response(request_dir, images)
    elif op == "encode":
        codes = {r["id"]: codec.encode(r["image"]) for r in rows}
        write_codes_response(request_dir, codes)
    else:
        probs = {r["id"]: codec.classify(r["image"]) for r in rows}
        write_probs_response(request_dir, probs)
