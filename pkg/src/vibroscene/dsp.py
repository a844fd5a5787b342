"""Spectrogram input construction, energy segmentation and input ablations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .simulator import WaveformBundle

ENERGY_WINDOW = 256
ENERGY_HOP = 128


class SilentChannelError(ValueError):
    """A channel has no frame above the energy threshold."""


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 512
    hop: int = 128
    n_mels: int = 128
    fmin: float = 20.0
    fmax: float | None = None  # None means Nyquist
    log_floor: float = 1e-6

    def __post_init__(self):
        if not self.window_len >= self.hop > 0:
            raise ValueError("need window_len >= hop > 0")
        if self.n_mels <= 0 or self.log_floor <= 0:
            raise ValueError("n_mels and log_floor must be > 0")

    def band(self, sample_rate: int) -> tuple[float, float]:
        fmax = sample_rate / 2 if self.fmax is None else self.fmax
        if not 0 <= self.fmin < fmax <= sample_rate / 2:
            raise ValueError(f"need fmin < fmax <= {sample_rate / 2}")
        return self.fmin, fmax

    @property
    def n_bins(self) -> int:
        return self.window_len // 2 + 1


@dataclass(frozen=True)
class InputTensor:
    """Stacked log-Mel spectrograms, (time, mel, 4), jointly scaled into [0, 1]."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 3 or d.shape[2] != 4:
            raise ValueError(f"expected (T, F, 4), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("non-finite input tensor")
        object.__setattr__(self, "data", d)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def to_network(self) -> np.ndarray:
        """Channels-first (4, T, F) layout expected by the network."""
        return np.ascontiguousarray(self.data.transpose(2, 0, 1))


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft_magnitude(channel, cfg: StftConfig) -> np.ndarray:
    """(frames, window_len // 2 + 1) magnitudes of the Hann-windowed one-sided DFT."""
    x = np.asarray(channel, dtype=float)
    if x.ndim != 1 or x.size < cfg.window_len:
        raise ValueError(f"need a 1-D channel of at least {cfg.window_len} samples")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len)[:: cfg.hop]
    return np.abs(np.fft.rfft(frames * hann(cfg.window_len), axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(cfg: StftConfig, sample_rate: int) -> np.ndarray:
    """(n_mels, n_bins) unit-peak triangles equally spaced on the HTK mel scale."""
    fmin, fmax = cfg.band(sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), cfg.n_mels + 2))
    freqs = np.arange(cfg.n_bins) * sample_rate / cfg.window_len
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_spectrogram(mag: np.ndarray, cfg: StftConfig, sample_rate: int) -> np.ndarray:
    """Mel pooling followed by ``log(1 + x / log_floor)``."""
    fb = mel_filterbank(cfg, sample_rate)
    if mag.shape[-1] != fb.shape[1]:
        raise ValueError(f"magnitude has {mag.shape[-1]} bins, filterbank expects {fb.shape[1]}")
    return np.log1p((mag @ fb.T) / cfg.log_floor)


def resize_time(x: np.ndarray, frames: int) -> np.ndarray:
    """Linear interpolation of axis 0 onto ``frames`` points (endpoints aligned)."""
    t = x.shape[0]
    if t == frames:
        return x.copy()
    if t == 1:
        return np.repeat(x, frames, axis=0)
    pos = np.linspace(0.0, t - 1, frames)
    i0 = np.minimum(np.floor(pos).astype(int), t - 2)
    w = (pos - i0)[:, None]
    return x[i0] * (1.0 - w) + x[i0 + 1] * w


def build_input(bundle: WaveformBundle, cfg: StftConfig = StftConfig(), out_dims=(128, 128)) -> InputTensor:
    """Per-channel STFT -> log-Mel -> time resize; stacked and jointly min-max scaled.

    A constant tensor (e.g. silent audio) maps to all zeros.
    """
    frames, mels = out_dims
    if mels != cfg.n_mels:
        raise ValueError(f"out_dims mel size {mels} != n_mels {cfg.n_mels}")
    ch = bundle.channels
    peak = np.abs(ch).max()
    if peak > 0:
        ch = ch / peak
    specs = [
        resize_time(mel_spectrogram(stft_magnitude(c, cfg), cfg, bundle.sample_rate), frames) for c in ch
    ]
    data = np.stack(specs, axis=2)
    lo, hi = data.min(), data.max()
    data = (data - lo) / (hi - lo) if hi > lo else np.zeros_like(data)
    return InputTensor(data)


def short_time_energy(x: np.ndarray, window: int = ENERGY_WINDOW, hop: int = ENERGY_HOP) -> np.ndarray:
    if x.size < window:
        x = np.pad(x, (0, window - x.size))
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop]
    return np.einsum("ij,ij->i", frames, frames)


def segment_by_energy(bundle: WaveformBundle, threshold: float = 1e-3):
    """Per-channel (start, end) sample window spanning all frames above ``threshold * max``.

    A frame is attributed to its newest hop block, so the start lands within one
    hop before the first loud sample. Silent channels yield ``None``.
    """
    out = []
    for x in bundle.channels:
        e = short_time_energy(x)
        above = np.flatnonzero(e > threshold * e.max())
        if above.size == 0:
            out.append(None)
            continue
        start = int(above[0]) * ENERGY_HOP + ENERGY_WINDOW - ENERGY_HOP
        end = min(int(above[-1]) * ENERGY_HOP + ENERGY_WINDOW, x.size)
        out.append((min(start, end), end))
    return out


def synchronize(segments) -> tuple[int, int]:
    """Common window from the earliest start and latest end over all channels."""
    segments = list(segments)
    silent = [i + 1 for i, s in enumerate(segments) if s is None]
    if silent:
        raise SilentChannelError(f"silent channel(s): {silent}")
    return min(s[0] for s in segments), max(s[1] for s in segments)


def crop(bundle: WaveformBundle, start: int, length: int) -> WaveformBundle:
    """Fixed-length window from ``start``; zero-padded past the end of the recording."""
    ch = bundle.channels[:, start:start + length]
    if ch.shape[1] < length:
        ch = np.pad(ch, ((0, 0), (0, length - ch.shape[1])))
    return WaveformBundle(ch, bundle.sample_rate)


def prepare_input(
    bundle: WaveformBundle,
    cfg: StftConfig = StftConfig(),
    threshold: float = 1e-3,
    out_dims=(128, 128),
) -> InputTensor:
    """Segment, synchronize, re-window to the recording length, then :func:`build_input`.

    The synchronized start is kept and the window length is the original clip
    length, so every episode shares one time scale with its first arrival near
    frame 0.
    """
    start, _ = synchronize(segment_by_energy(bundle, threshold))
    return build_input(crop(bundle, start, bundle.length), cfg, out_dims)


def ablate_flip(t: InputTensor) -> InputTensor:
    """Swap mic 1 with mic 4 and mic 2 with mic 3."""
    return InputTensor(t.data[:, :, [3, 2, 1, 0]])


def ablate_threshold_amplitude(t: InputTensor, tau: float) -> InputTensor:
    """Binary spectrogram: 1 where value >= tau."""
    return InputTensor((t.data >= tau).astype(float))


def _shift_time(x: np.ndarray, s: int) -> np.ndarray:
    out = np.zeros_like(x)
    t = x.shape[0]
    if abs(s) >= t:
        return out
    if s >= 0:
        out[s:] = x[: t - s]
    else:
        out[: t + s] = x[-s:]
    return out


def ablate_temporal_shift(t: InputTensor, shift_frames: int) -> InputTensor:
    """Delay mics 1 and 2 by ``shift_frames`` and advance mics 4 and 3 by the same.

    Positive shifts move content to later frames; vacated frames are zero.
    """
    d = t.data.copy()
    s = int(shift_frames)
    for ch, sign in ((0, 1), (1, 1), (2, -1), (3, -1)):
        d[:, :, ch] = _shift_time(t.data[:, :, ch], sign * s)
    return InputTensor(d)


def samples_to_frames(
    n_samples: float,
    source_rate: float,
    sample_rate: int,
    cfg: StftConfig = StftConfig(),
    clip_samples: int | None = None,
    out_frames: int = 128,
) -> int:
    """Convert a shift in samples at ``source_rate`` to resized spectrogram frames."""
    seconds = n_samples / source_rate
    raw_frames = seconds * sample_rate / cfg.hop
    if clip_samples is not None:
        total = (clip_samples - cfg.window_len) // cfg.hop + 1
        raw_frames *= out_frames / total
    return int(round(raw_frames))
