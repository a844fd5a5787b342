"""Masks, IoU, minimum-area rotated boxes, localization score and non-learned baselines."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import BACKGROUND_RGB, FOREGROUND_RGB, SceneImage

DEFAULT_TOL = 0.15
_EIGHT = np.ones((3, 3), dtype=int)


class EmptyMaskError(ValueError):
    pass


@dataclass(frozen=True)
class BinaryMask:
    grid: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=bool))

    @property
    def count(self) -> int:
        return int(self.grid.sum())

    @property
    def empty(self) -> bool:
        return self.count == 0


@dataclass(frozen=True)
class RotatedBox:
    """Rectangle in pixel-center coordinates (x = column, y = row).

    ``half_extents[0]`` runs along ``angle`` and is the longer side.
    """

    center: tuple[float, float]
    half_extents: tuple[float, float]
    angle: float

    @property
    def diagonal(self) -> float:
        return 2.0 * math.hypot(*self.half_extents)

    @property
    def area(self) -> float:
        return 4.0 * self.half_extents[0] * self.half_extents[1]


def largest_component(mask: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n <= 1:
        return mask.astype(bool)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def binarize(img, background_color=BACKGROUND_RGB, tol: float = DEFAULT_TOL) -> BinaryMask:
    """Background subtraction: keep pixels whose max channel deviation exceeds ``tol``.

    Only the largest 8-connected component survives (lowest label on ties).
    """
    rgb = img.rgb if isinstance(img, SceneImage) else np.asarray(img)
    dev = np.abs(rgb - np.asarray(background_color)[None, None, :]).max(axis=2)
    return BinaryMask(largest_component(dev > tol))


def _grid(m) -> np.ndarray:
    return m.grid if isinstance(m, BinaryMask) else np.asarray(m, dtype=bool)


def iou(a, b) -> float:
    """Intersection over union; two empty masks score 0."""
    a, b = _grid(a), _grid(b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; counter-clockwise, no collinear points."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def min_area_rect(points: np.ndarray) -> RotatedBox:
    """Minimum-area enclosing rectangle of a point set via hull-edge calipers."""
    hull = convex_hull(points)
    if len(hull) == 1:
        return RotatedBox((float(hull[0, 0]), float(hull[0, 1])), (0.0, 0.0), 0.0)
    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.mod(np.arctan2(edges[:, 1], edges[:, 0]), math.pi / 2)
    angles[angles > math.pi / 2 - 1e-9] = 0.0
    angles = np.unique(np.round(angles, 12))
    c, s = np.cos(angles), np.sin(angles)
    u = hull[:, 0][None, :] * c[:, None] + hull[:, 1][None, :] * s[:, None]
    v = -hull[:, 0][None, :] * s[:, None] + hull[:, 1][None, :] * c[:, None]
    areas = (u.max(1) - u.min(1)) * (v.max(1) - v.min(1))
    best = areas.min()
    # ties resolved toward the smallest angle
    i = int(np.flatnonzero(areas <= best + 1e-9 * max(best, 1.0))[0])
    phi = float(angles[i])
    hu = (u[i].max() - u[i].min()) / 2
    hv = (v[i].max() - v[i].min()) / 2
    cu = (u[i].max() + u[i].min()) / 2
    cv = (v[i].max() + v[i].min()) / 2
    center = (cu * c[i] - cv * s[i], cu * s[i] + cv * c[i])
    if hv > hu + 1e-12:
        hu, hv = hv, hu
        phi += math.pi / 2
    return RotatedBox((float(center[0]), float(center[1])), (float(hu), float(hv)), float(math.fmod(phi, math.pi)))


def mask_points(m) -> np.ndarray:
    rows, cols = np.nonzero(_grid(m))
    return np.stack([cols, rows], axis=1).astype(float)


def min_area_box(m) -> RotatedBox:
    """Minimum-area rotated box around the foreground pixel centers."""
    pts = mask_points(m)
    if len(pts) == 0:
        raise EmptyMaskError("cannot fit a box to an empty mask")
    return min_area_rect(pts)


def evaluate_pair(pred: SceneImage, truth: SceneImage, tol: float = DEFAULT_TOL) -> dict:
    """IoU plus the localization hit test ``d <= l / 2`` for one prediction."""
    pm, tm = binarize(pred, tol=tol), binarize(truth, tol=tol)
    tbox = min_area_box(tm)
    rec = {"iou": iou(pm, tm), "d": None, "l": tbox.diagonal, "hit": False}
    if not pm.empty:
        pbox = min_area_box(pm)
        d = math.hypot(pbox.center[0] - tbox.center[0], pbox.center[1] - tbox.center[1])
        rec["d"] = d
        rec["hit"] = bool(d <= tbox.diagonal / 2)
    return rec


def localization_score(preds, truths, tol: float = DEFAULT_TOL) -> float:
    preds, truths = list(preds), list(truths)
    if len(preds) != len(truths) or not preds:
        raise ValueError("need equally many, non-zero predictions and truths")
    return float(np.mean([evaluate_pair(p, t, tol)["hit"] for p, t in zip(preds, truths)]))


def mean_iou(preds, truths, tol: float = DEFAULT_TOL) -> float:
    return float(np.mean([iou(binarize(p, tol=tol), binarize(t, tol=tol)) for p, t in zip(preds, truths)]))


def rasterize_box(box: RotatedBox, shape: tuple[int, int], pad: float = 0.5) -> np.ndarray:
    """Pixels whose centers fall in the box grown by ``pad`` (pixel-center boxes undercount by half a pixel)."""
    rows, cols = np.mgrid[0 : shape[0], 0 : shape[1]]
    dx, dy = cols - box.center[0], rows - box.center[1]
    c, s = math.cos(box.angle), math.sin(box.angle)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (np.abs(u) <= box.half_extents[0] + pad) & (np.abs(v) <= box.half_extents[1] + pad)


def scene_from_mask(mask: np.ndarray, depth_value: float, meters_per_pixel: float) -> SceneImage:
    rgb = np.empty(mask.shape + (3,))
    rgb[:] = BACKGROUND_RGB
    rgb[mask] = FOREGROUND_RGB
    depth = np.zeros(mask.shape + (1,))
    depth[mask] = depth_value
    return SceneImage(rgb=rgb, depth=depth, meters_per_pixel=meters_per_pixel)


def baseline_random(train_scenes, seed: int):
    """Predict a uniformly drawn training scene, independent of the input."""
    scenes = list(train_scenes)
    rng = np.random.default_rng(seed)

    def predict(_input=None) -> SceneImage:
        return scenes[int(rng.integers(len(scenes)))]

    return predict


def average_box(boxes) -> RotatedBox:
    """Mean center and half-extents; orientation by the doubled-angle circular mean."""
    boxes = list(boxes)
    cx = float(np.mean([b.center[0] for b in boxes]))
    cy = float(np.mean([b.center[1] for b in boxes]))
    hx = float(np.mean([b.half_extents[0] for b in boxes]))
    hy = float(np.mean([b.half_extents[1] for b in boxes]))
    two = np.array([2 * b.angle for b in boxes])
    ang = 0.5 * math.atan2(np.sin(two).mean(), np.cos(two).mean())
    ang = math.fmod(ang + math.pi, math.pi)
    if abs(ang - math.pi) < 1e-12:
        ang = 0.0
    return RotatedBox((cx, cy), (hx, hy), ang)


def baseline_avg_box(train_scenes, tol: float = DEFAULT_TOL):
    """One fixed prediction: the average training bounding box."""
    scenes = list(train_scenes)
    boxes, depths = [], []
    for s in scenes:
        m = binarize(s, tol=tol)
        boxes.append(min_area_box(m))
        depths.append(float(s.depth[m.grid].mean()))
    box = average_box(boxes)
    shape = scenes[0].rgb.shape[:2]
    scene = scene_from_mask(rasterize_box(box, shape), float(np.mean(depths)), scenes[0].meters_per_pixel)

    def predict(_input=None) -> SceneImage:
        return scene

    predict.box = box
    return predict


def baseline_nearest_neighbor(train_inputs, train_scenes, chunk: int = 64):
    """Scene of the training input closest in L2; ties go to the lowest index."""
    bank = np.stack([np.asarray(getattr(t, "data", t), dtype=float).ravel() for t in train_inputs])
    scenes = list(train_scenes)

    def distances(x) -> np.ndarray:
        q = np.asarray(getattr(x, "data", x), dtype=float).ravel()
        out = np.empty(len(bank))
        for i in range(0, len(bank), chunk):
            diff = bank[i:i + chunk] - q
            out[i:i + chunk] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        return out

    def predict(x) -> SceneImage:
        return scenes[int(np.argmin(distances(x)))]

    predict.distances = distances
    return predict
