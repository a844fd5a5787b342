"""On-disk formats: float WAV, PPM/PGM images, JSONL manifests and metric reports."""
from __future__ import annotations

import json
import math
import re
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .simulator import WaveformBundle

DEPTH_SCALE = 65535
DEPTH_COMMENT = f"# depth = value / {DEPTH_SCALE}, 0 = floor, 1 = tallest shape"


class FormatError(ValueError):
    pass


def write_wav(path, bundle: WaveformBundle) -> None:
    """4-channel 32-bit float little-endian RIFF WAVE."""
    wavfile.write(str(path), int(bundle.sample_rate), np.ascontiguousarray(bundle.channels.T, dtype="<f4"))


def read_wav(path) -> WaveformBundle:
    rate, data = wavfile.read(str(path))
    if data.dtype != np.float32 or data.ndim != 2 or data.shape[1] != 4:
        raise FormatError(f"{path}: expected 4-channel float32 audio, got {data.dtype} {data.shape}")
    return WaveformBundle(data.T.astype(np.float64), int(rate))


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` whitespace-separated header tokens (comments skipped) and the raster offset."""
    tokens, pos = [], 0
    while len(tokens) < count:
        m = re.compile(rb"\s*(#[^\n]*\n|\S+)").match(data, pos)
        if m is None:
            raise FormatError("truncated header")
        pos = m.end()
        if not m.group(1).startswith(b"#"):
            tokens.append(m.group(1))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after header")
    return tokens, pos + 1


def encode_ppm(rgb: np.ndarray) -> bytes:
    """Binary P6, 8 bits per channel, values rounded from [0, 1]."""
    h, w, c = rgb.shape
    if c != 3:
        raise FormatError("PPM needs 3 channels")
    raster = np.rint(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode() + raster.tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    (magic, w, h, maxval), off = _header_tokens(data, 4)
    if magic != b"P6" or int(maxval) != 255:
        raise FormatError("expected an 8-bit P6 image")
    w, h = int(w), int(h)
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=off)
    return raster.reshape(h, w, 3).astype(np.float64) / 255


def encode_pgm16(depth: np.ndarray) -> bytes:
    """Binary P5, 16 bits big-endian, linear depth scale stated in a header comment."""
    d = depth[..., 0] if depth.ndim == 3 else depth
    h, w = d.shape
    raster = np.rint(np.clip(d, 0.0, 1.0) * DEPTH_SCALE).astype(">u2")
    return f"P5\n{DEPTH_COMMENT}\n{w} {h}\n{DEPTH_SCALE}\n".encode() + raster.tobytes()


def decode_pgm16(data: bytes) -> np.ndarray:
    (magic, w, h, maxval), off = _header_tokens(data, 4)
    if magic != b"P5" or int(maxval) != DEPTH_SCALE:
        raise FormatError("expected a 16-bit P5 image")
    w, h = int(w), int(h)
    raster = np.frombuffer(data, dtype=">u2", count=w * h, offset=off)
    return (raster.reshape(h, w, 1).astype(np.float64)) / DEPTH_SCALE


def write_ppm(path, rgb) -> None:
    Path(path).write_bytes(encode_ppm(rgb))


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_pgm16(path, depth) -> None:
    Path(path).write_bytes(encode_pgm16(depth))


def read_pgm16(path) -> np.ndarray:
    return decode_pgm16(Path(path).read_bytes())


def _clean(value):
    """JSON-safe values: numpy scalars to Python, non-finite floats to null."""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def dumps_jsonl(records) -> str:
    return "".join(json.dumps(_clean(r), ensure_ascii=False) + "\n" for r in records)


def write_jsonl(path, records) -> None:
    Path(path).write_text(dumps_jsonl(records), encoding="utf-8")


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def manifest_record(index, event, wav_path, rgb_path, depth_path) -> dict:
    p = event.final_pose
    return {
        "id": int(index),
        "seed": int(event.seed),
        "shape": event.shape.kind.value,
        "final_pose": {"x": p.x, "y": p.y, "theta": p.theta},
        "impact_count": len(event.impacts),
        "wav_path": str(wav_path),
        "rgb_path": str(rgb_path),
        "depth_path": str(depth_path),
    }
