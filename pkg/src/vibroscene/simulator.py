"""Synthetic drop episodes: bounce trajectories and 4-channel contact-mic waveforms."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BoxWorld,
    DomainError,
    Pose2D,
    SceneImage,
    ShapeSpec,
    expected_delays,
    render_scene,
)

GRAVITY = 9.81


@dataclass(frozen=True)
class Impact:
    time_s: float
    position: tuple[float, float, float]
    energy: float


@dataclass(frozen=True)
class DropEvent:
    shape: ShapeSpec
    impacts: tuple[Impact, ...]
    final_pose: Pose2D
    scene: SceneImage = field(repr=False)
    seed: int


@dataclass(frozen=True)
class WaveformBundle:
    channels: np.ndarray  # (4, length)
    sample_rate: int

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=float)
        if ch.ndim != 2 or ch.shape[0] != 4:
            raise ValueError(f"expected 4 equal-length channels, got shape {ch.shape}")
        if not np.all(np.isfinite(ch)):
            raise ValueError("waveforms contain non-finite samples")
        object.__setattr__(self, "channels", ch)

    @property
    def length(self) -> int:
        return self.channels.shape[1]


@dataclass(frozen=True)
class TrajectoryConfig:
    drop_height_m: tuple[float, float] = (0.05, 0.20)
    max_horizontal_speed: float = 0.6
    restitution: tuple[float, float] = (0.35, 0.5)
    horizontal_retention: float = 0.7  # fraction of horizontal speed kept per floor impact
    stop_fraction: float = 1e-3  # kinetic energy relative to the first impact
    pre_roll_s: float = 0.05
    max_impacts: int = 8
    min_impacts: int = 2

    def __post_init__(self):
        lo, hi = self.restitution
        if not 0 < lo <= hi < 1:
            raise ValueError("restitution must lie in (0, 1)")
        if not 2 <= self.min_impacts <= self.max_impacts:
            raise ValueError("need 2 <= min_impacts <= max_impacts")


@dataclass(frozen=True)
class AcousticsConfig:
    decay_tau_s: float = 0.012
    attack_tau_s: float = 2.5e-4
    ring_band_hz: tuple[float, float] = (300.0, 3000.0)
    attenuation_exponent: float = 1.0
    echo_count: int = 3
    echo_delay_s: float = 0.0015
    echo_gain: float = 0.35
    noise_std: float = 0.002  # relative to the clean peak amplitude
    clip_len_s: float = 1.024
    ring_down_taus: float = 5.0  # the clip must extend this many taus past the last echo

    def __post_init__(self):
        if min(self.decay_tau_s, self.attack_tau_s, self.echo_delay_s, self.clip_len_s) <= 0:
            raise ValueError("time constants must be > 0")
        if not 0 < self.echo_gain < 1:
            raise ValueError("echo_gain must lie in (0, 1)")
        if self.echo_count < 0 or self.noise_std < 0:
            raise ValueError("echo_count and noise_std must be >= 0")
        lo, hi = self.ring_band_hz
        if not 0 < lo <= hi:
            raise ValueError("bad ring band")

    @classmethod
    def clean(cls, **kw) -> "AcousticsConfig":
        """Single-path, noiseless acoustics."""
        kw.setdefault("echo_count", 0)
        kw.setdefault("noise_std", 0.0)
        return cls(**kw)


def _fold(p: float, v: float, lo: float, hi: float) -> tuple[float, float]:
    """Position/velocity after specular reflections keep ``p`` inside [lo, hi]."""
    span = hi - lo
    if span <= 0:
        return lo, 0.0
    u = (p - lo) % (2 * span)
    if u <= span:
        return lo + u, v
    return lo + 2 * span - u, -v


def simulate_trajectory(
    world: BoxWorld,
    shape: ShapeSpec,
    seed: int,
    cfg: TrajectoryConfig | None = None,
    start: tuple[float, float] | None = None,
    velocity: tuple[float, float] | None = None,
    res: int = 128,
) -> DropEvent:
    """Bounce an object around the floor until it settles.

    The resting orientation is drawn first so the billiard region can be
    shrunk by the rotated footprint; every impact then keeps the footprint
    inside the box. ``start`` and ``velocity`` override the random draws.
    """
    cfg = cfg or TrajectoryConfig()
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, math.pi)
    ex, ey = shape.rotated_half_extents(theta)
    lo = (ex, ey)
    hi = (world.width_m - ex, world.length_m - ey)
    if hi[0] < lo[0] or hi[1] < lo[1]:
        raise DomainError(f"{shape.kind.value} does not fit in the box")
    px = rng.uniform(lo[0], hi[0])
    py = rng.uniform(lo[1], hi[1])
    speed = rng.uniform(0.0, cfg.max_horizontal_speed)
    heading = rng.uniform(0.0, 2 * math.pi)
    height = rng.uniform(*cfg.drop_height_m)
    if start is not None:
        px, py = start
    vx, vy = speed * math.cos(heading), speed * math.sin(heading)
    if velocity is not None:
        vx, vy = velocity

    vz = math.sqrt(2 * GRAVITY * height)
    e0 = vz * vz + vx * vx + vy * vy
    flight = vz / GRAVITY  # free fall to the first floor contact
    t = cfg.pre_roll_s
    fs = world.sample_rate
    impacts = []
    while True:
        t += flight
        px, vx = _fold(px + vx * flight, vx, lo[0], hi[0])
        py, vy = _fold(py + vy * flight, vy, lo[1], hi[1])
        # impact instants sit half a sample before the sample grid so that an
        # arrival delayed by d first shows up at sample k + round(d * fs)
        k = int(round(t * fs))
        if impacts:
            k = max(k, int(round(impacts[-1].time_s * fs + 0.5)) + 1)
        impacts.append(Impact((k - 0.5) / fs, (px, py, 0.0), (vz * vz) / (2 * GRAVITY * cfg.drop_height_m[1])))
        vz *= rng.uniform(*cfg.restitution)
        vx *= cfg.horizontal_retention
        vy *= cfg.horizontal_retention
        kinetic = (vz * vz + vx * vx + vy * vy) / e0
        n = len(impacts)
        if n >= cfg.max_impacts or (n >= cfg.min_impacts and kinetic < cfg.stop_fraction):
            break
        flight = 2 * vz / GRAVITY

    final = Pose2D(px, py, theta)
    scene = render_scene(world, shape, final, res)
    return DropEvent(shape=shape, impacts=tuple(impacts), final_pose=final, scene=scene, seed=int(seed))


def render_impacts(event: DropEvent, world: BoxWorld, cfg: AcousticsConfig, seed: int) -> np.ndarray:
    """Noise-free, unnormalized (4, n) waveforms: damped cosines plus echoes per impact.

    Every arrival is a continuous-time pulse starting at its exact (fractional)
    arrival time, with a short exponential attack, sampled on the output grid.
    """
    if not event.impacts:
        raise DomainError("event has no impacts")
    fs = world.sample_rate
    n = int(round(cfg.clip_len_s * fs))
    last = max(imp.time_s + expected_delays(world, imp.position).max() for imp in event.impacts)
    last += cfg.echo_count * cfg.echo_delay_s + cfg.ring_down_taus * cfg.decay_tau_s
    if last >= cfg.clip_len_s:
        raise DomainError(f"clip of {cfg.clip_len_s}s cannot hold an arrival at {last:.4f}s")
    rng = np.random.default_rng(seed)
    freqs = rng.uniform(*cfg.ring_band_hz, size=len(event.impacts))
    out = np.zeros((4, n))
    for imp, f in zip(event.impacts, freqs):
        delays = expected_delays(world, imp.position)
        dist = delays * world.wave_speed
        amps = imp.energy / np.power(dist, cfg.attenuation_exponent)
        for ch in range(4):
            for k in range(cfg.echo_count + 1):
                t_a = imp.time_s + delays[ch] + k * cfg.echo_delay_s
                start = int(math.ceil(t_a * fs))
                if start >= n:
                    continue
                dt = np.arange(start, n) / fs - t_a
                env = -np.expm1(-dt / cfg.attack_tau_s) * np.exp(-dt / cfg.decay_tau_s)
                out[ch, start:] += amps[ch] * cfg.echo_gain ** k * env * np.cos(2 * math.pi * f * dt)
    return out


def synthesize_waveforms(
    event: DropEvent, world: BoxWorld, cfg: AcousticsConfig, seed: int, normalize: bool = True
) -> WaveformBundle:
    """4-channel contact-mic signal of an episode, jointly peak-normalized.

    Noise is Gaussian with standard deviation ``noise_std`` times the clean peak.
    One gain is applied to all channels so inter-channel level ratios survive.
    """
    clean = render_impacts(event, world, cfg, seed)
    peak = float(np.abs(clean).max())
    x = clean
    if cfg.noise_std > 0:
        noise_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
        x = clean + noise_rng.normal(0.0, cfg.noise_std * peak, size=clean.shape)
    if normalize:
        m = float(np.abs(x).max())
        if m > 0:
            x = x / m
    return WaveformBundle(channels=x, sample_rate=world.sample_rate)


def episode_seed(master_seed: int, index: int, attempt: int = 0) -> int:
    ss = np.random.SeedSequence([int(master_seed), int(index), int(attempt)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _episode(args):
    world, shape, acoustics, traj, master_seed, index, res = args
    for attempt in range(100):
        seed = episode_seed(master_seed, index, attempt)
        event = simulate_trajectory(world, shape, seed, traj, res=res)
        try:
            bundle = synthesize_waveforms(event, world, acoustics, seed)
        except DomainError:
            continue
        return event, bundle
    raise RuntimeError(f"episode {index}: no attempt fit inside the clip")


def generate_dataset(
    n: int,
    shapes,
    world: BoxWorld,
    cfg: AcousticsConfig,
    master_seed: int,
    traj: TrajectoryConfig | None = None,
    workers: int = 1,
    res: int = 128,
) -> list[tuple[DropEvent, WaveformBundle]]:
    """``n`` episodes with shapes assigned round-robin, returned in index order."""
    if n <= 0:
        raise ValueError("n must be > 0")
    shapes = list(shapes)
    if not shapes:
        raise ValueError("need at least one shape")
    traj = traj or TrajectoryConfig()
    jobs = [(world, shapes[i % len(shapes)], cfg, traj, master_seed, i, res) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_episode, jobs, chunksize=8))
    return [_episode(j) for j in jobs]
