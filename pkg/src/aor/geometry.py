"""Box and region-feature geometry.

Boxes are ``NormalizedBox`` instances in image-relative coordinates.  Feature
maps are ``(channels, height, width)`` arrays; a pyramid is a list of maps
ordered finest first.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

ROI_SIZE = 14
PERTURB_LEVELS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


class BoxError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class NormalizedBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise BoxError(f"non-finite box {vals}")
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise BoxError(f"invalid normalized box {vals}")

    @classmethod
    def of(cls, coords: Sequence[float]) -> "NormalizedBox":
        if len(coords) != 4:
            raise BoxError(f"box needs 4 coordinates, got {len(coords)}")
        return cls(*(float(c) for c in coords))

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


def normalize_box(pixel_box: Sequence[float], image_w: float, image_h: float) -> NormalizedBox:
    if len(pixel_box) != 4:
        raise BoxError(f"box needs 4 coordinates, got {len(pixel_box)}")
    x1, y1, x2, y2 = (float(v) for v in pixel_box)
    if image_w <= 0 or image_h <= 0:
        raise BoxError(f"bad image size {image_w}x{image_h}")
    if not (x1 < x2 and y1 < y2):
        raise BoxError(f"degenerate box {tuple(pixel_box)}")
    if x1 < 0 or y1 < 0 or x2 > image_w or y2 > image_h:
        raise BoxError(f"box {tuple(pixel_box)} outside {image_w}x{image_h} image")
    return NormalizedBox(x1 / image_w, y1 / image_h, x2 / image_w, y2 / image_h)


def iou(a: NormalizedBox, b: NormalizedBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _slide(lo: float, hi: float, shift: float) -> tuple[float, float]:
    size = hi - lo
    lo, hi = lo + shift, hi + shift
    if lo < 0.0:
        return 0.0, size
    if hi > 1.0:
        return 1.0 - size, 1.0
    return lo, hi


def perturb_box(
    box: NormalizedBox,
    p: float,
    w: float = 1.0,
    h: float = 1.0,
    rng: np.random.Generator | None = None,
    *,
    independent: bool = False,
) -> NormalizedBox:
    """Translate ``box`` by ``(±r*w, ±r*h)`` pixels with ``r ~ U[0, p]``.

    ``w``/``h`` are the image size; the shift is applied in pixels and mapped
    back to normalized coordinates, so it is ``±r`` of the image per axis.
    One ``r`` is shared by both axes unless ``independent`` is set.  The box
    keeps its size and slides flush against the border instead of leaving
    the image.
    """
    if not any(abs(p - lvl) < 1e-9 for lvl in PERTURB_LEVELS):
        raise BoxError(f"p must be one of {PERTURB_LEVELS}, got {p}")
    if p == 0:
        return box
    rng = rng if rng is not None else np.random.default_rng()
    r1 = rng.uniform(0.0, p)
    r2 = rng.uniform(0.0, p) if independent else r1
    s1, s2 = rng.choice((-1.0, 1.0), size=2)
    d1, d2 = s1 * r1 * w, s2 * r2 * h
    return shift_box(box, d1 / w, d2 / h)


def shift_box(box: NormalizedBox, dx: float, dy: float) -> NormalizedBox:
    """Translate by a normalized offset, sliding flush against the border."""
    x1, x2 = _slide(box.x1, box.x2, dx)
    y1, y2 = _slide(box.y1, box.y2, dy)
    return NormalizedBox(x1, y1, x2, y2)


def classify_box(box: NormalizedBox, candidates: Mapping[str, NormalizedBox]) -> str:
    """Region whose box overlaps ``box`` most; ties go to the smallest id."""
    return max(sorted(candidates), key=lambda k: iou(box, candidates[k]))


def perturbation_mismatch(
    studies: Sequence[Mapping[str, NormalizedBox]],
    levels: Sequence[float] = PERTURB_LEVELS,
    draws: int = 10_000,
    seed: int = 0,
    *,
    independent: bool = False,
) -> dict[float, float]:
    """Fraction of perturbed boxes re-assigned to the wrong region, per ``p``.

    Every level reuses the same (study, region, u, sign) draws scaled by
    ``p`` (common random numbers), so rates differ only through ``p``.
    """
    rng = np.random.default_rng(seed)
    keys = [(i, k) for i, st in enumerate(studies) for k in sorted(st)]
    if not keys:
        raise BoxError("no boxes to perturb")
    pick = rng.integers(0, len(keys), size=draws)
    u = rng.uniform(0.0, 1.0, size=(draws, 2))
    if not independent:
        u[:, 1] = u[:, 0]
    signs = rng.choice((-1.0, 1.0), size=(draws, 2))
    out: dict[float, float] = {}
    for p in levels:
        wrong = 0
        for j in range(draws):
            i, k = keys[pick[j]]
            box = studies[i][k]
            moved = box if p == 0 else shift_box(box, signs[j, 0] * u[j, 0] * p, signs[j, 1] * u[j, 1] * p)
            wrong += classify_box(moved, studies[i]) != k
        out[float(p)] = wrong / draws
    return out


# feature maps --------------------------------------------------------------


@dataclass(frozen=True)
class FeatureMap:
    values: np.ndarray  # (channels, height, width)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"feature map must be (c, h, w) with dims >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature map contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class RegionFeature:
    grid: np.ndarray  # (channels, 14, 14)
    pooled: np.ndarray  # (channels,)
    level: int


def select_pyramid_level(box: NormalizedBox | None, num_levels: int, *, area: float | None = None) -> int:
    """FPN-style assignment ``floor(L-1 + log2(sqrt(area)))`` clamped to ``[0, L-1]``."""
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    a = box.area if box is not None else area
    if a is None:
        raise ValueError("need a box or an area")
    if a <= 0:
        return 0
    lvl = math.floor((num_levels - 1) + math.log2(math.sqrt(a)))
    return max(0, min(num_levels - 1, lvl))


def _interp_weights(u: np.ndarray, size: int) -> np.ndarray:
    """Linear interpolation weights for continuous coordinates ``u`` in ``[0, size]``.

    Cell ``i`` has its center at ``i + 0.5``; outside the outermost centers the
    nearest edge cell value is used.  Returns ``(len(u), size)``.
    """
    t = np.clip(np.asarray(u, dtype=np.float64) - 0.5, 0.0, size - 1)
    lo = np.floor(t).astype(int)
    lo = np.minimum(lo, size - 1)
    hi = np.minimum(lo + 1, size - 1)
    frac = t - lo
    out = np.zeros((t.size, size))
    rows = np.arange(t.size)
    np.add.at(out, (rows, lo), 1.0 - frac)
    np.add.at(out, (rows, hi), frac)
    return out


def _bin_operator_exact(start: float, stop: float, bins: int, size: int) -> np.ndarray:
    """Rows average the interpolated signal exactly over each bin."""
    edges = np.linspace(start, stop, bins + 1)
    knots = np.arange(size) + 0.5
    out = np.zeros((bins, size))
    for b in range(bins):
        lo, hi = edges[b], edges[b + 1]
        pts = np.concatenate(([lo], knots[(knots > lo) & (knots < hi)], [hi]))
        w = _interp_weights(pts, size)
        seg = np.diff(pts)[:, None]
        # piecewise linear between knots, so the trapezoid rule is exact
        out[b] = np.sum(seg * (w[:-1] + w[1:]) / 2.0, axis=0) / (hi - lo)
    return out


def _bin_operator_sampled(start: float, stop: float, bins: int, size: int, ratio: int) -> np.ndarray:
    step = (stop - start) / bins
    offs = (np.arange(ratio) + 0.5) / ratio
    centers = start + (np.arange(bins)[:, None] + offs[None, :]) * step
    w = _interp_weights(centers.ravel(), size).reshape(bins, ratio, size)
    return w.mean(axis=1)


def roi_align_map(
    fmap: FeatureMap, box: NormalizedBox, output_size: int = ROI_SIZE, sampling_ratio: int | None = None
) -> np.ndarray:
    """RoIAlign of one map: ``(channels, output_size, output_size)``.

    With ``sampling_ratio=None`` each bin is the exact mean of the bilinear
    interpolant over the bin.  An integer ``k`` averages ``k x k`` bilinear
    samples per bin instead.
    """
    W, H = fmap.width, fmap.height
    args = (output_size,)
    if sampling_ratio is None:
        ax = _bin_operator_exact(box.x1 * W, box.x2 * W, *args, W)
        ay = _bin_operator_exact(box.y1 * H, box.y2 * H, *args, H)
    else:
        if sampling_ratio < 1:
            raise ValueError("sampling_ratio must be >= 1")
        ax = _bin_operator_sampled(box.x1 * W, box.x2 * W, *args, W, sampling_ratio)
        ay = _bin_operator_sampled(box.y1 * H, box.y2 * H, *args, H, sampling_ratio)
    # separable interpolation: grid[c] = Ay @ M[c] @ Ax^T
    return np.einsum("ih,chw,jw->cij", ay, fmap.values, ax)


def roi_align(
    pyramid: Sequence[FeatureMap], box: NormalizedBox, output_size: int = ROI_SIZE, sampling_ratio: int | None = None
) -> RegionFeature:
    if not pyramid:
        raise ValueError("empty pyramid")
    level = select_pyramid_level(box, len(pyramid))
    grid = roi_align_map(pyramid[level], box, output_size, sampling_ratio)
    return RegionFeature(grid=grid, pooled=grid.mean(axis=(1, 2)), level=level)


def synthetic_pyramid(
    rng: np.random.Generator, base: int = 64, levels: int = 4, channels: int = 8
) -> list[FeatureMap]:
    """Random maps halving in resolution per level."""
    return [
        FeatureMap(rng.standard_normal((channels, max(1, base >> i), max(1, base >> i)))) for i in range(levels)
    ]


def write_feature_map(path: str | Path, fmap: FeatureMap) -> None:
    """Text header line ``{"h", "w", "c"}`` followed by little-endian float32 in (h, w, c) order."""
    header = json.dumps({"h": fmap.height, "w": fmap.width, "c": fmap.channels}).encode() + b"\n"
    body = np.ascontiguousarray(fmap.values.transpose(1, 2, 0), dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_feature_map(path: str | Path) -> FeatureMap:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing header line")
    header = json.loads(raw[:nl])
    h, w, c = int(header["h"]), int(header["w"]), int(header["c"])
    data = np.frombuffer(raw[nl + 1 :], dtype="<f4")
    if data.size != h * w * c:
        raise ValueError(f"{path}: expected {h * w * c} values, found {data.size}")
    return FeatureMap(data.reshape(h, w, c).transpose(2, 0, 1).astype(np.float64))
