"""Box and binary-mask arithmetic.

Boxes use relative coordinates in [0, 1]. Masks are run-length encoded over a
column-major flattening of the pixel grid, with runs of alternating values
starting from 0 (uncompressed COCO-style counts).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import PipelineError

BCE_EPS = 1e-7


class OutOfRange(PipelineError):
    """A box coordinate lies outside [0, 1]."""


class DegenerateRegion(PipelineError):
    """The operation divides by a region area of zero."""


class RunSumMismatch(PipelineError):
    """RLE runs are inconsistent with the mask dimensions."""


class DimensionMismatch(PipelineError):
    """Masks or grids do not share the same dimensions."""


class EmptyMask(PipelineError):
    """The mask has no foreground pixels."""


@dataclass(frozen=True)
class BoundingBox:
    """Relative-coordinate box. Canonical form has x1 <= x2 and y1 <= y2.

    Source data may carry non-canonical corner orderings; those are preserved
    as stored and canonicalized only where arithmetic requires it.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for value in (self.x1, self.y1, self.x2, self.y2):
            if not 0.0 <= value <= 1.0:
                raise OutOfRange(f"coordinate {value} outside [0, 1]")

    @property
    def is_canonical(self) -> bool:
        return self.x1 <= self.x2 and self.y1 <= self.y2

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def area(self) -> float:
        return max(0.0, self.x2 - self.x1) * max(0.0, self.y2 - self.y1)


def canonicalize_box(box: BoundingBox | Sequence[float]) -> BoundingBox:
    """Reorder corners so x1 <= x2 and y1 <= y2, preserving each axis' values."""
    if not isinstance(box, BoundingBox):
        x1, y1, x2, y2 = box
        box = BoundingBox(x1, y1, x2, y2)
    if box.is_canonical:
        return box
    return BoundingBox(
        min(box.x1, box.x2),
        min(box.y1, box.y2),
        max(box.x1, box.x2),
        max(box.y1, box.y2),
    )


def _intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two canonical boxes; 0 when the union is empty."""
    inter = _intersection_area(a, b)
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def intersection_over_region(region: BoundingBox, anchor: BoundingBox) -> float:
    """|region ∩ anchor| / |region| for canonical boxes."""
    region_area = region.area()
    if region_area <= 0.0:
        raise DegenerateRegion(f"region {region.as_tuple()} has zero area")
    return _intersection_area(region, anchor) / region_area


@dataclass(frozen=True)
class BinaryMask:
    """RLE mask: alternating run lengths starting with the 0-value run."""

    height: int
    width: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise RunSumMismatch(f"mask dimensions {self.height}x{self.width} must be positive")
        if not self.runs:
            raise RunSumMismatch("runs must be non-empty")
        if any(r < 0 for r in self.runs):
            raise RunSumMismatch("runs must be non-negative")
        if any(r == 0 for r in self.runs[1:]):
            raise RunSumMismatch("only the first run may be zero")
        total = sum(self.runs)
        if total != self.height * self.width:
            raise RunSumMismatch(
                f"runs sum to {total}, expected {self.height * self.width}"
            )

    def to_json(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.runs)}

    @classmethod
    def from_json(cls, obj: dict) -> "BinaryMask":
        try:
            height, width = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise RunSumMismatch(f"malformed RLE object: {exc}") from exc
        return cls(int(height), int(width), tuple(int(c) for c in counts))


def rle_decode(mask: BinaryMask) -> np.ndarray:
    """Expand a mask to a dense uint8 grid of shape (height, width)."""
    values = np.arange(len(mask.runs), dtype=np.uint8) % 2
    flat = np.repeat(values, mask.runs)
    return flat.reshape((mask.height, mask.width), order="F")


def rle_encode(grid: np.ndarray | Sequence[Sequence[int]]) -> BinaryMask:
    """Encode a dense 0/1 grid into canonical runs (no interior zero runs)."""
    arr = np.asarray(grid)
    if arr.ndim != 2:
        raise RunSumMismatch(f"grid must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise RunSumMismatch("grid must be non-empty")
    if not np.isin(arr, (0, 1)).all():
        raise RunSumMismatch("grid values must be 0 or 1")
    flat = arr.astype(np.uint8).flatten(order="F")
    change = np.flatnonzero(np.diff(flat)) + 1
    boundaries = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(boundaries).tolist()
    if flat[0] == 1:
        runs = [0] + runs
    return BinaryMask(int(arr.shape[0]), int(arr.shape[1]), tuple(int(r) for r in runs))


def _one_intervals(mask: BinaryMask) -> list[tuple[int, int]]:
    """Half-open [start, end) index ranges of 1-pixels in the flattened grid."""
    intervals = []
    pos = 0
    for i, run in enumerate(mask.runs):
        if i % 2 == 1 and run > 0:
            intervals.append((pos, pos + run))
        pos += run
    return intervals


def mask_area(mask: BinaryMask) -> int:
    return sum(mask.runs[1::2])


def mask_intersection_area(a: BinaryMask, b: BinaryMask) -> int:
    """Count pixels set in both masks, computed on the runs without decoding."""
    if (a.height, a.width) != (b.height, b.width):
        raise DimensionMismatch(
            f"mask dimensions differ: {a.height}x{a.width} vs {b.height}x{b.width}"
        )
    ia, ib = _one_intervals(a), _one_intervals(b)
    total = 0
    i = j = 0
    while i < len(ia) and j < len(ib):
        lo = max(ia[i][0], ib[j][0])
        hi = min(ia[i][1], ib[j][1])
        if hi > lo:
            total += hi - lo
        if ia[i][1] <= ib[j][1]:
            i += 1
        else:
            j += 1
    return total


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Pixel IoU; 0 when both masks are empty (mirrors the box convention)."""
    inter = mask_intersection_area(a, b)
    union = mask_area(a) + mask_area(b) - inter
    if union == 0:
        return 0.0
    return inter / union


def dice_coefficient(a: BinaryMask, b: BinaryMask) -> float:
    """2|a ∩ b| / (|a| + |b|); two empty masks count as perfect agreement."""
    inter = mask_intersection_area(a, b)
    denom = mask_area(a) + mask_area(b)
    if denom == 0:
        return 1.0
    return 2.0 * inter / denom


def dice_loss(a: BinaryMask, b: BinaryMask) -> float:
    return 1.0 - dice_coefficient(a, b)


def bce_mask(
    pred: np.ndarray | Sequence[Sequence[float]], gt: BinaryMask | np.ndarray
) -> float:
    """Mean pixelwise binary cross entropy against a ground-truth mask.

    The ground truth may be an encoded mask or a dense 0/1 grid. Predictions
    are clamped to [BCE_EPS, 1 - BCE_EPS] so the loss stays finite without
    changing the ordering of predictions.
    """
    arr = np.asarray(pred, dtype=np.float64)
    y = (rle_decode(gt) if isinstance(gt, BinaryMask) else np.asarray(gt)).astype(np.float64)
    if arr.shape != y.shape:
        raise DimensionMismatch(
            f"prediction shape {arr.shape} does not match mask shape {y.shape}"
        )
    p = np.clip(arr, BCE_EPS, 1.0 - BCE_EPS)
    losses = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(losses.mean())


def box_from_mask(mask: BinaryMask) -> BoundingBox:
    """Tightest canonical relative box containing every 1-pixel."""
    grid = rle_decode(mask)
    rows, cols = np.nonzero(grid)
    if rows.size == 0:
        raise EmptyMask("mask has no foreground pixels")
    return BoundingBox(
        cols.min() / mask.width,
        rows.min() / mask.height,
        (cols.max() + 1) / mask.width,
        (rows.max() + 1) / mask.height,
    )
