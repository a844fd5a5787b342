"""Analytical baseline: GCC-PHAT delays and grid-search localization on the box floor."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .dsp import ENERGY_HOP, ENERGY_WINDOW, short_time_energy
from .geometry import BoxWorld, Pose2D, SceneImage, ShapeSpec, expected_delays, render_scene
from .simulator import WaveformBundle

PAIRS = tuple(itertools.combinations(range(4), 2))
RMS_FLOOR = 1e-9
PHAT_EPS = 1e-12
PHAT_MAX_HZ = 4000.0  # impact rings sit below 3 kHz; higher bins carry mostly sampling artifacts


class LowEnergyError(ValueError):
    """Input too quiet to estimate a delay."""


class UnlocalizableError(RuntimeError):
    """No usable pairwise delay estimate."""


@dataclass(frozen=True)
class DelayEstimate:
    pair: tuple[int, int]
    delay_s: float  # positive: the signal reaches channel pair[0] later
    confidence: float
    lag_samples: float = 0.0


def gcc_phat(
    x, y, max_lag: int, sample_rate: float = 1.0, pair=(0, 1), max_freq_hz: float | None = None
) -> DelayEstimate:
    """Delay of ``x`` relative to ``y`` by phase-transform weighted cross-correlation.

    Bins above ``max_freq_hz`` are dropped after whitening (full band when None).
    The integer peak is refined by a parabola through it and its neighbours.
    Confidence is ``1 - second_peak / first_peak`` over local maxima, clipped to [0, 1].
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 64:
        raise ValueError("gcc_phat needs two 1-D signals of equal length >= 64")
    if math.sqrt(np.mean(x * x)) < RMS_FLOOR or math.sqrt(np.mean(y * y)) < RMS_FLOOR:
        raise LowEnergyError("signal energy below floor")
    n = 2 * x.size
    r = np.fft.rfft(x, n) * np.conj(np.fft.rfft(y, n))
    r /= np.maximum(np.abs(r), PHAT_EPS)
    if max_freq_hz is not None:
        r[np.fft.rfftfreq(n, 1.0 / sample_rate) > max_freq_hz] = 0.0
    cc = np.fft.irfft(r, n)
    max_lag = int(min(max_lag, x.size - 1))
    cc = np.concatenate([cc[-max_lag:], cc[: max_lag + 1]]) if max_lag > 0 else cc[:1]
    k = int(np.argmax(cc))
    frac = 0.0
    if 0 < k < cc.size - 1:
        a, b, c = cc[k - 1], cc[k], cc[k + 1]
        den = a - 2 * b + c
        if den < 0:
            frac = 0.5 * (a - c) / den
    lag = k - max_lag + frac

    peak = cc[k]
    interior = np.flatnonzero((cc[1:-1] > cc[:-2]) & (cc[1:-1] >= cc[2:])) + 1
    others = [cc[i] for i in interior if abs(i - k) > 1]
    if cc.size > 1:
        if cc[0] > cc[1] and k > 1:
            others.append(cc[0])
        if cc[-1] > cc[-2] and k < cc.size - 2:
            others.append(cc[-1])
    second = max(others) if others else 0.0
    conf = 1.0 - second / peak if peak > 0 else 0.0
    return DelayEstimate(tuple(pair), lag / sample_rate, float(np.clip(conf, 0.0, 1.0)), float(lag))


def max_lag_samples(world: BoxWorld) -> int:
    return int(math.ceil(world.diagonal_m / world.wave_speed * world.sample_rate))


def bounce_window(bundle: WaveformBundle, k: int = 3, max_len_s: float = 0.05) -> tuple[int, int]:
    """Sample window starting at the k-th detected energy onset (whole clip if fewer)."""
    e = sum(short_time_energy(c) for c in bundle.channels)
    if e.max() <= 0:
        return 0, bundle.length
    loge = np.log10(e + e.max() * 1e-12)
    peaks, _ = find_peaks(loge, prominence=0.5)
    if len(peaks) < k:
        return 0, bundle.length
    p = peaks[k - 1]
    # walk back to the rising edge of this peak
    start_frame = p
    while start_frame > 0 and loge[start_frame - 1] < loge[start_frame]:
        start_frame -= 1
    start = start_frame * ENERGY_HOP
    end = start + int(max_len_s * bundle.sample_rate)
    if k < len(peaks):
        end = min(end, peaks[k] * ENERGY_HOP + ENERGY_WINDOW - ENERGY_HOP)
    return start, min(max(end, start + 64), bundle.length)


def pairwise_delays(
    bundle: WaveformBundle, world: BoxWorld, window=None, max_freq_hz: float | None = PHAT_MAX_HZ
) -> list[DelayEstimate]:
    start, end = window if window is not None else (0, bundle.length)
    ch = bundle.channels[:, start:end]
    lag = max_lag_samples(world)
    out = []
    for i, j in PAIRS:
        try:
            out.append(gcc_phat(ch[i], ch[j], lag, bundle.sample_rate, (i, j), max_freq_hz))
        except LowEnergyError:
            out.append(DelayEstimate((i, j), 0.0, 0.0))
    return out


def floor_grid(world: BoxWorld, grid_res_m: float) -> tuple[np.ndarray, np.ndarray]:
    nx = max(1, int(math.floor(world.width_m / grid_res_m + 1e-9)))
    ny = max(1, int(math.floor(world.length_m / grid_res_m + 1e-9)))
    xs = (np.arange(nx) + 0.5) * world.width_m / nx
    ys = (np.arange(ny) + 0.5) * world.length_m / ny
    return xs, ys


def localize(
    bundle: WaveformBundle,
    world: BoxWorld,
    grid_res_m: float = 0.005,
    bounce: int | None = 3,
    min_confidence: float = 0.05,
) -> tuple[tuple[float, float], float]:
    """Floor cell whose modelled pairwise delays best match the GCC-PHAT estimates.

    Returns ``((x, y), residual)`` where the residual is the confidence-weighted
    sum of squared delay mismatches in seconds squared. Ties go to the smallest
    x, then the smallest y.
    """
    if grid_res_m <= 0:
        raise ValueError("grid_res_m must be > 0")
    window = bounce_window(bundle, bounce) if bounce else None
    est = pairwise_delays(bundle, world, window)
    usable = [d for d in est if d.confidence >= min_confidence]
    if not usable:
        raise UnlocalizableError("all pairwise delay estimates are low-confidence")
    xs, ys = floor_grid(world, grid_res_m)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
    dist = np.linalg.norm(pts[:, None, :] - world.mics[None, :, :], axis=2) / world.wave_speed
    cost = np.zeros(len(pts))
    for d in usable:
        i, j = d.pair
        cost += d.confidence * (dist[:, i] - dist[:, j] - d.delay_s) ** 2
    best = int(np.argmin(cost))
    return (float(pts[best, 0]), float(pts[best, 1])), float(cost[best])


def clamp_pose(world: BoxWorld, shape: ShapeSpec, x: float, y: float, theta: float = 0.0) -> Pose2D:
    ex, ey = shape.rotated_half_extents(theta)
    return Pose2D(
        min(max(x, ex), world.width_m - ex),
        min(max(y, ey), world.length_m - ey),
        theta,
    )


def tdoa_predict_scene(
    bundle: WaveformBundle, world: BoxWorld, shape: ShapeSpec, grid_res_m: float = 0.005, bounce: int | None = 3,
    res: int = 128,
) -> SceneImage:
    """Render the shape axis-aligned at the localized point (clamped to fit the box)."""
    (x, y), _ = localize(bundle, world, grid_res_m, bounce)
    return render_scene(world, shape, clamp_pose(world, shape, x, y), res)


def delays_at(world: BoxWorld, x: float, y: float) -> np.ndarray:
    """Modelled pairwise delays (seconds) in :data:`PAIRS` order for a floor point."""
    d = expected_delays(world, (x, y))
    return np.array([d[i] - d[j] for i, j in PAIRS])
