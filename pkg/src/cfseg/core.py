"""Shared domain types, validation, and dataset bookkeeping.

Images and masks are plain numpy arrays (float32 in [0, 1] and uint8 in
{0, 1} respectively, both row-major single channel); records and datasets
are frozen dataclasses.  Everything is immutable after construction and
safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

CS_DIM = 8
MIN_IMAGE_SIDE = 8


class ContractError(ValueError):
    """An operation was called with data violating its type contract."""


class ClassLabel(str, Enum):
    NORMAL = "normal"
    ABNORMAL = "abnormal"

    @classmethod
    def parse(cls, text: str) -> "ClassLabel":
        try:
            return cls(text)
        except ValueError:
            raise ContractError(f"unknown class label {text!r}") from None


def as_image(data: np.ndarray) -> np.ndarray:
    """Validate and canonicalize a single-channel image array."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ContractError(f"image must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
        raise ContractError(f"image sides must be >= {MIN_IMAGE_SIDE}, got {h}x{w}")
    if not np.all(np.isfinite(arr)):
        raise ContractError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ContractError("image values must lie in [0, 1]")
    arr.flags.writeable = False
    return arr


def as_mask(data: np.ndarray, like: np.ndarray | None = None) -> np.ndarray:
    """Validate a binary mask; `like` enforces the paired image shape."""
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ContractError(f"mask must be 2-D, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ContractError("mask values must be exactly 0 or 1")
    if like is not None and arr.shape != like.shape:
        raise ContractError(f"mask shape {arr.shape} != image shape {like.shape}")
    out = arr.astype(np.uint8)
    out.flags.writeable = False
    return out


def as_cs_code(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (CS_DIM,):
        raise ContractError(f"CS code must have length {CS_DIM}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError("CS code contains non-finite values")
    arr.flags.writeable = False
    return arr


def as_is_code(values, expected_dim: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractError(f"IS code must be 1-D, got shape {arr.shape}")
    if expected_dim is not None and arr.shape[0] != expected_dim:
        raise ContractError(f"IS code length {arr.shape[0]} != declared {expected_dim}")
    if not np.all(np.isfinite(arr)):
        raise ContractError("IS code contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SampleRecord:
    """One sample flowing through the pipeline."""

    id: str
    label: ClassLabel
    cs: np.ndarray
    is_code: np.ndarray
    image: np.ndarray | None = None
    gt_mask: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "cs", as_cs_code(self.cs))
        object.__setattr__(self, "is_code", as_is_code(self.is_code))
        if self.image is not None:
            object.__setattr__(self, "image", as_image(self.image))
        if self.gt_mask is not None:
            object.__setattr__(self, "gt_mask", as_mask(self.gt_mask, like=self.image))


@dataclass(frozen=True)
class Dataset:
    records: tuple[SampleRecord, ...]
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.split not in ("train", "test"):
            raise ContractError(f"split must be 'train' or 'test', got {self.split!r}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self, record_id: str) -> SampleRecord:
        for rec in self.records:
            if rec.id == record_id:
                return rec
        raise KeyError(record_id)


@dataclass(frozen=True)
class Finding:
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    findings: tuple[Finding, ...]


@dataclass(frozen=True)
class Stats:
    n_normal: int
    n_abnormal: int
    cs_dim: int
    is_dim: int
    image_shape: tuple[int, int] | None

    @property
    def total(self) -> int:
        return self.n_normal + self.n_abnormal


def validate_dataset(ds: Dataset) -> ValidationReport:
    """Report-only consistency check; never raises.

    Two consecutive calls on the same dataset return identical reports.
    """
    findings: list[Finding] = []
    if len(ds) == 0:
        findings.append(Finding("empty", "dataset contains no records"))
        return ValidationReport(valid=False, findings=tuple(findings))

    seen: dict[str, int] = {}
    for rec in ds:
        seen[rec.id] = seen.get(rec.id, 0) + 1
    for rid in sorted(k for k, v in seen.items() if v > 1):
        findings.append(Finding("duplicate-id", f"id {rid!r} appears {seen[rid]} times"))

    is_dim = ds.records[0].is_code.shape[0]
    img_shape = None if ds.records[0].image is None else ds.records[0].image.shape
    for rec in ds:
        if rec.cs.shape != (CS_DIM,):
            findings.append(Finding("cs-dim", f"{rec.id}: CS length {rec.cs.shape[0]}"))
        if rec.is_code.shape[0] != is_dim:
            findings.append(
                Finding("is-dim", f"{rec.id}: IS length {rec.is_code.shape[0]} != {is_dim}")
            )
        if rec.image is not None:
            if img_shape is None:
                img_shape = rec.image.shape
            elif rec.image.shape != img_shape:
                findings.append(
                    Finding("image-shape", f"{rec.id}: shape {rec.image.shape} != {img_shape}")
                )
            # as_image enforces range at construction; re-check here because
            # validate_dataset must also catch arrays built elsewhere.
            if rec.image.min() < 0.0 or rec.image.max() > 1.0:
                findings.append(Finding("pixel-range", f"{rec.id}: pixels outside [0, 1]"))

    return ValidationReport(valid=not findings, findings=tuple(findings))


def dataset_stats(ds: Dataset) -> Stats:
    """Counts and dimensions; raises on an invalid dataset."""
    report = validate_dataset(ds)
    if not report.valid:
        msgs = "; ".join(f.message for f in report.findings[:3])
        raise ContractError(f"invalid dataset: {msgs}")
    n_normal = sum(1 for r in ds if r.label is ClassLabel.NORMAL)
    n_abnormal = len(ds) - n_normal
    img_shape = None if ds.records[0].image is None else tuple(ds.records[0].image.shape)
    return Stats(
        n_normal=n_normal,
        n_abnormal=n_abnormal,
        cs_dim=CS_DIM,
        is_dim=ds.records[0].is_code.shape[0],
        image_shape=img_shape,
    )
