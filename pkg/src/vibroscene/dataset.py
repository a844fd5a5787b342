"""In-memory experiment datasets: episodes, network inputs and scene targets."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dsp import StftConfig, prepare_input
from .geometry import BoxWorld, Pose2D, SceneImage, ShapeSpec
from .simulator import AcousticsConfig, DropEvent, TrajectoryConfig, WaveformBundle, generate_dataset


def _input(args):
    bundle, stft, threshold = args
    return prepare_input(bundle, stft, threshold).to_network().astype(np.float32)


def build_inputs(bundles, stft: StftConfig = StftConfig(), threshold: float = 1e-3, workers: int = 1) -> np.ndarray:
    """(N, 4, 128, 128) float32 network inputs, in bundle order."""
    jobs = [(b, stft, threshold) for b in bundles]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return np.stack(list(pool.map(_input, jobs, chunksize=16)))
    return np.stack([_input(j) for j in jobs])


@dataclass
class Dataset:
    """Parallel per-episode lists plus the stacked network inputs."""

    shapes: list[ShapeSpec] = field(repr=False)
    poses: list[Pose2D] = field(repr=False)
    scenes: list[SceneImage] = field(repr=False)
    bundles: list[WaveformBundle] = field(repr=False)
    inputs: np.ndarray = field(repr=False)
    events: list[DropEvent] | None = field(default=None, repr=False)  # only when freshly simulated

    def __len__(self) -> int:
        return len(self.scenes)

    def subset(self, idx) -> "Dataset":
        idx = [int(i) for i in idx]
        return Dataset(
            [self.shapes[i] for i in idx],
            [self.poses[i] for i in idx],
            [self.scenes[i] for i in idx],
            [self.bundles[i] for i in idx],
            self.inputs[idx],
            None if self.events is None else [self.events[i] for i in idx],
        )

    @classmethod
    def from_episodes(cls, events: list[DropEvent], bundles, inputs) -> "Dataset":
        return cls(
            [e.shape for e in events], [e.final_pose for e in events], [e.scene for e in events], list(bundles), inputs,
            list(events),
        )


def make_dataset(
    n: int,
    shapes: list[ShapeSpec],
    world: BoxWorld,
    acoustics: AcousticsConfig,
    master_seed: int,
    traj: TrajectoryConfig | None = None,
    stft: StftConfig = StftConfig(),
    threshold: float = 1e-3,
    workers: int = 1,
) -> Dataset:
    pairs = generate_dataset(n, shapes, world, acoustics, master_seed, traj, workers=workers)
    events = [p[0] for p in pairs]
    bundles = [p[1] for p in pairs]
    return Dataset.from_episodes(events, bundles, build_inputs(bundles, stft, threshold, workers))
