"""Segmentation overlap metrics: IOU and DICE with dataset means.

All scores are ratios of exact integer pixel counts with a single final
division, so there is no accumulation drift at any desk scale.  The
empty-mask conventions are explicit: a pair of empty masks scores 1.0
(perfect agreement on absence); if exactly one side is empty the score
is 0.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cfseg.core import ContractError


def _check_pair(p: np.ndarray, g: np.ndarray) -> None:
    if p.shape != g.shape:
        raise ContractError(f"mask shapes differ: {p.shape} vs {g.shape}")


def mask_area(m: np.ndarray) -> int:
    """Number of 1-pixels."""
    return int(np.count_nonzero(m))


def intersection_area(p: np.ndarray, g: np.ndarray) -> int:
    _check_pair(np.asarray(p), np.asarray(g))
    return int(np.count_nonzero(np.logical_and(p, g)))


def iou(p: np.ndarray, g: np.ndarray) -> float:
    p = np.asarray(p)
    g = np.asarray(g)
    _check_pair(p, g)
    inter = intersection_area(p, g)
    union = mask_area(p) + mask_area(g) - inter
    if union == 0:
        return 1.0  # both empty
    return inter / union


def dice(p: np.ndarray, g: np.ndarray) -> float:
    p = np.asarray(p)
    g = np.asarray(g)
    _check_pair(p, g)
    inter = intersection_area(p, g)
    total = mask_area(p) + mask_area(g)
    if total == 0:
        return 1.0  # both empty
    return 2.0 * inter / total


@dataclass(frozen=True)
class MetricsReport:
    per_sample: tuple[tuple[str, float, float], ...]  # (id, iou, dice)
    mean_iou: float
    mean_dice: float
    n: int


def mean_report(pairs: list[tuple[np.ndarray, np.ndarray, str]]) -> MetricsReport:
    """Per-pair scores and arithmetic means over (pred, gt, id) triples."""
    if not pairs:
        raise ContractError("mean_report requires at least one pair")
    per = []
    for pred, gt, rid in pairs:
        per.append((rid, iou(pred, gt), dice(pred, gt)))
    n = len(per)
    return MetricsReport(
        per_sample=tuple(per),
        mean_iou=math.fsum(s[1] for s in per) / n,
        mean_dice=math.fsum(s[2] for s in per) / n,
        n=n,
    )
