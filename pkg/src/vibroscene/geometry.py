"""Box world, microphone layout, object shapes and top-down scene rendering."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

FOREGROUND_RGB = (0.86, 0.70, 0.48)  # light wood
BACKGROUND_RGB = (0.10, 0.10, 0.12)
DEFAULT_RESOLUTION = 128
DEFAULT_MAX_HEIGHT_M = 0.05


class DomainError(ValueError):
    """An input lies outside the physical domain (e.g. a pose outside the box)."""


@dataclass(frozen=True)
class BoxWorld:
    """Interior box geometry, one contact microphone per wall, and acoustic constants.

    Microphone order follows the wall pairing used by the flip ablation:
    mic 1 on x=0, mic 2 on y=0, mic 3 on y=length, mic 4 on x=width, so
    (1, 4) and (2, 3) face each other.
    """

    width_m: float = 0.155
    length_m: float = 0.26
    height_m: float = 0.13
    mic_positions: tuple[tuple[float, float, float], ...] = ()
    wave_speed: float = 500.0
    sample_rate: int = 16000
    mic_height_m: float = 0.02

    def __post_init__(self):
        for name in ("width_m", "length_m", "height_m", "wave_speed", "sample_rate"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0")
        if not self.mic_positions:
            w, l, h = self.width_m, self.length_m, self.mic_height_m
            object.__setattr__(
                self,
                "mic_positions",
                ((0.0, l / 2, h), (w / 2, 0.0, h), (w / 2, l, h), (w, l / 2, h)),
            )
        mics = tuple(tuple(float(c) for c in m) for m in self.mic_positions)
        object.__setattr__(self, "mic_positions", mics)
        if len(mics) != 4:
            raise DomainError("exactly 4 microphone positions are required")
        walls = {self._wall_of(m) for m in mics}
        if None in walls or len(walls) != 4:
            raise DomainError("each microphone must sit on a distinct wall plane")

    def _wall_of(self, m, tol=1e-9):
        x, y, _ = m
        for name, dist in (("x0", abs(x)), ("x1", abs(x - self.width_m)), ("y0", abs(y)), ("y1", abs(y - self.length_m))):
            if dist <= tol:
                return name
        return None

    @property
    def mics(self) -> np.ndarray:
        return np.asarray(self.mic_positions, dtype=float)

    @property
    def diagonal_m(self) -> float:
        return math.sqrt(self.width_m ** 2 + self.length_m ** 2 + self.height_m ** 2)

    def with_(self, **kw) -> "BoxWorld":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        if "mic_positions" not in kw and any(k in kw for k in ("width_m", "length_m", "mic_height_m")):
            d["mic_positions"] = ()
        return BoxWorld(**d)


class ShapeKind(str, enum.Enum):
    CUBE = "cube"
    BLOCK = "block"
    STICK = "stick"


@dataclass(frozen=True)
class ShapeSpec:
    kind: ShapeKind
    footprint_m: tuple[float, float]  # half-extents along the object's local x and y
    height_m: float

    def __post_init__(self):
        object.__setattr__(self, "kind", ShapeKind(self.kind))
        hx, hy = (float(v) for v in self.footprint_m)
        object.__setattr__(self, "footprint_m", (hx, hy))
        if hx <= 0 or hy <= 0 or self.height_m <= 0:
            raise DomainError("shape extents must be > 0")
        if self.kind is ShapeKind.CUBE and hx != hy:
            raise DomainError("a cube needs equal half-extents")

    def rotated_half_extents(self, theta: float) -> tuple[float, float]:
        """Half-extents of the axis-aligned box around the footprint rotated by theta."""
        hx, hy = self.footprint_m
        c, s = abs(math.cos(theta)), abs(math.sin(theta))
        return hx * c + hy * s, hx * s + hy * c


CUBE = ShapeSpec(ShapeKind.CUBE, (0.025, 0.025), 0.05)
BLOCK = ShapeSpec(ShapeKind.BLOCK, (0.0375, 0.025), 0.025)
STICK = ShapeSpec(ShapeKind.STICK, (0.05, 0.01), 0.02)
DEFAULT_SHAPES = {s.kind.value: s for s in (CUBE, BLOCK, STICK)}


def normalize_angle(theta: float) -> float:
    t = math.fmod(theta, math.pi)
    if t < 0:
        t += math.pi
    # fmod can land exactly on pi after the shift for tiny negatives
    return 0.0 if t >= math.pi else t


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))


def pose_fits(world: BoxWorld, shape: ShapeSpec, pose: Pose2D, tol: float = 1e-12) -> bool:
    ex, ey = shape.rotated_half_extents(pose.theta)
    return (
        pose.x - ex >= -tol
        and pose.x + ex <= world.width_m + tol
        and pose.y - ey >= -tol
        and pose.y + ey <= world.length_m + tol
    )


@dataclass(frozen=True)
class SceneImage:
    rgb: np.ndarray = field(repr=False)  # (H, W, 3) in [0, 1]
    depth: np.ndarray = field(repr=False)  # (H, W, 1) in [0, 1]
    meters_per_pixel: float

    @property
    def resolution(self) -> tuple[int, int]:
        return self.rgb.shape[:2]


def image_frame(world: BoxWorld, res: int = DEFAULT_RESOLUTION) -> tuple[float, float, float]:
    """(meters_per_pixel, x_origin, y_origin): world coords of the image's top-left corner.

    The box floor is scaled isotropically so its longer side spans the image and
    centered along the shorter side. Rows follow y, columns follow x.
    """
    mpp = max(world.width_m, world.length_m) / res
    x0 = (world.width_m - res * mpp) / 2
    y0 = (world.length_m - res * mpp) / 2
    return mpp, x0, y0


def world_to_pixel(world: BoxWorld, x: float, y: float, res: int = DEFAULT_RESOLUTION) -> tuple[float, float]:
    """(col, row) in pixel-center index units."""
    mpp, x0, y0 = image_frame(world, res)
    return (x - x0) / mpp - 0.5, (y - y0) / mpp - 0.5


def pixel_to_world(world: BoxWorld, col: float, row: float, res: int = DEFAULT_RESOLUTION) -> tuple[float, float]:
    mpp, x0, y0 = image_frame(world, res)
    return x0 + (col + 0.5) * mpp, y0 + (row + 0.5) * mpp


def footprint_mask(world: BoxWorld, shape: ShapeSpec, pose: Pose2D, res: int = DEFAULT_RESOLUTION) -> np.ndarray:
    """Boolean (res, res) raster: pixel centers inside or on the rotated footprint rectangle."""
    mpp, x0, y0 = image_frame(world, res)
    centers = (np.arange(res) + 0.5) * mpp
    px = x0 + centers[None, :] - pose.x
    py = y0 + centers[:, None] - pose.y
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    u = c * px + s * py
    v = -s * px + c * py
    hx, hy = shape.footprint_m
    # boundary points count as inside; the slack absorbs rounding in the rotation
    tol = 1e-9 * mpp
    return (np.abs(u) <= hx + tol) & (np.abs(v) <= hy + tol)


def render_scene(
    world: BoxWorld,
    shape: ShapeSpec,
    pose: Pose2D,
    res: int = DEFAULT_RESOLUTION,
    max_height_m: float = DEFAULT_MAX_HEIGHT_M,
) -> SceneImage:
    """Top-down RGB and depth images of one resting object."""
    if not pose_fits(world, shape, pose):
        raise DomainError(f"{shape.kind.value} at {pose} does not fit inside the box floor")
    mask = footprint_mask(world, shape, pose, res)
    rgb = np.empty((res, res, 3))
    rgb[:] = BACKGROUND_RGB
    rgb[mask] = FOREGROUND_RGB
    depth = np.zeros((res, res, 1))
    depth[mask] = min(shape.height_m / max_height_m, 1.0)
    mpp, _, _ = image_frame(world, res)
    return SceneImage(rgb=rgb, depth=depth, meters_per_pixel=mpp)


def expected_delays(world: BoxWorld, source) -> np.ndarray:
    """Propagation delay in seconds from a source point to each microphone.

    ``source`` is (x, y) on the floor or (x, y, z).
    """
    p = np.zeros(3)
    src = np.asarray(source, dtype=float)
    p[: src.size] = src
    tol = 1e-9
    if not (
        -tol <= p[0] <= world.width_m + tol
        and -tol <= p[1] <= world.length_m + tol
        and -tol <= p[2] <= world.height_m + tol
    ):
        raise DomainError(f"source {tuple(p)} is outside the box")
    return np.linalg.norm(world.mics - p, axis=1) / world.wave_speed
