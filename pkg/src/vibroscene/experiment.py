"""Experiment pipeline shared by the command line and the acceptance tests.

Dataset directories, checkpoint bundles of the RGB and depth networks, model
and baseline evaluation, and the three input ablations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig
from .dataset import Dataset, build_inputs, make_dataset
from .dsp import InputTensor, ablate_flip, ablate_temporal_shift, ablate_threshold_amplitude, samples_to_frames
from .eval import (
    baseline_avg_box,
    baseline_nearest_neighbor,
    baseline_random,
    binarize,
    evaluate_pair,
    min_area_box,
    scene_from_mask,
)
from .geometry import DEFAULT_SHAPES, Pose2D, SceneImage, image_frame, render_scene
from .nn import checkpoint
from .nn.model import SceneNet
from .nn.optim import lr_schedule
from .nn.train import scene_targets, split_indices, train
from .tdoa import UnlocalizableError, tdoa_predict_scene

META_PREFIX = "meta."
AMPLITUDE_KEY = META_PREFIX + "amplitude_tau"
METHODS = ("model", "tdoa", "random", "avg_box", "nn")


class DataError(RuntimeError):
    pass


# ---------------------------------------------------------------- datasets

def episode_paths(root: Path, index: int) -> tuple[Path, Path, Path]:
    stem = f"episodes/{index:05d}"
    return Path(f"{stem}.wav"), Path(f"{stem}.ppm"), Path(f"{stem}.pgm")


def write_dataset(cfg: ExperimentConfig, out: Path, seed: int | None = None) -> Dataset:
    """Generate episodes and persist waveforms, scene images and the manifest."""
    seed = cfg.data_seed if seed is None else seed
    ds = make_dataset(
        cfg.data.n_episodes, cfg.shape_specs, cfg.world, cfg.acoustics, seed, cfg.trajectory,
        cfg.stft, cfg.data.segment_threshold, cfg.workers,
    )
    (out / "episodes").mkdir(parents=True, exist_ok=True)
    records = []
    for i, (event, bundle) in enumerate(zip(ds.events, ds.bundles)):
        wav, rgb, depth = episode_paths(out, i)
        io.write_wav(out / wav, bundle)
        io.write_ppm(out / rgb, event.scene.rgb)
        io.write_pgm16(out / depth, event.scene.depth)
        records.append(io.manifest_record(i, event, wav, rgb, depth))
    io.write_jsonl(out / "manifest.jsonl", records)
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    return ds


def read_dataset(cfg: ExperimentConfig, root: Path) -> Dataset:
    """Reload a generated dataset; inputs are rebuilt from the stored waveforms."""
    manifest = root / "manifest.jsonl"
    if not manifest.is_file():
        raise DataError(f"no dataset at {root} (missing manifest.jsonl)")
    shapes, poses, scenes, bundles = [], [], [], []
    for rec in io.read_jsonl(manifest):
        shape = DEFAULT_SHAPES[rec["shape"]]
        p = rec["final_pose"]
        pose = Pose2D(p["x"], p["y"], p["theta"])
        scene = render_scene(cfg.world, shape, pose, cfg.data.image_size)
        stored = io.read_ppm(root / rec["rgb_path"])
        if not np.array_equal(io.encode_ppm(stored), io.encode_ppm(scene.rgb)):
            raise DataError(f"episode {rec['id']}: stored image disagrees with its pose")
        shapes.append(shape)
        poses.append(pose)
        scenes.append(scene)
        bundles.append(io.read_wav(root / rec["wav_path"]))
    inputs = build_inputs(bundles, cfg.stft, cfg.data.segment_threshold, cfg.workers)
    return Dataset(shapes, poses, scenes, bundles, inputs)


def load_or_generate(cfg: ExperimentConfig, root: Path | None = None) -> Dataset:
    if root is not None and (root / "manifest.jsonl").is_file():
        return read_dataset(cfg, root)
    return make_dataset(
        cfg.data.n_episodes, cfg.shape_specs, cfg.world, cfg.acoustics, cfg.data_seed, cfg.trajectory,
        cfg.stft, cfg.data.segment_threshold, cfg.workers,
    )


def splits(cfg: ExperimentConfig, ds: Dataset) -> tuple[Dataset, Dataset, Dataset]:
    tr, va, te = split_indices(len(ds), cfg.data.split)
    return ds.subset(tr), ds.subset(va), ds.subset(te)


# ---------------------------------------------------------------- models

@dataclass
class TrainedModels:
    nets: dict  # target name -> SceneNet
    amplitude_tau: float | None = None

    def state(self) -> dict:
        out = {}
        for target, net in self.nets.items():
            for k, v in net.params.state().items():
                out[f"{target}/{k}"] = v
        if self.amplitude_tau is not None:
            out[AMPLITUDE_KEY] = np.array([self.amplitude_tau])
        return out

    def save(self, path) -> None:
        checkpoint.save(path, self.state())

    @classmethod
    def load(cls, cfg: ExperimentConfig, path) -> "TrainedModels":
        state = checkpoint.load(path)
        tau = state.pop(AMPLITUDE_KEY, None)
        nets = {}
        for target in ("rgb", "depth"):
            prefix = f"{target}/"
            sub = {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}
            if sub:
                net = SceneNet(cfg.model_config(target))
                net.params.load(sub)
                nets[target] = net
        if "rgb" not in nets:
            raise DataError(f"{path}: checkpoint has no RGB network")
        return cls(nets, None if tau is None else float(tau[0]))


def model_inputs(x: np.ndarray, amplitude_tau: float | None) -> np.ndarray:
    """Apply the amplitude ablation to (N, 4, H, W) inputs when requested.

    Vectorized equivalent of :func:`ablate_threshold_amplitude` that keeps the dtype.
    """
    if amplitude_tau is None:
        return x
    return (x >= amplitude_tau).astype(x.dtype)


def train_models(
    cfg: ExperimentConfig, train_ds: Dataset, val_ds: Dataset, seed: int,
    amplitude_tau: float | None = None, targets=None, log=None,
):
    """Independent RGB and depth networks, each with its own seeded init and shuffle."""
    t = cfg.training

    def schedule(epoch):
        return lr_schedule(epoch, t.base_lr, t.milestones, t.lr_decay)

    x_tr = model_inputs(train_ds.inputs, amplitude_tau)
    x_va = model_inputs(val_ds.inputs, amplitude_tau)
    nets, traces = {}, {}
    for k, target in enumerate(targets or t.targets):
        net = SceneNet(cfg.model_config(target), seed=seed * 2 + k)
        y_tr = scene_targets(train_ds.scenes, target)
        y_va = scene_targets(val_ds.scenes, target)
        lg = None if log is None else (lambda e, r, target=target: log(target, e, r))
        traces[target] = train(
            net, x_tr, y_tr, target, t.epochs, t.batch_size, seed, val=(x_va, y_va), schedule=schedule, log=lg
        )
        nets[target] = net
    return TrainedModels(nets, amplitude_tau), traces


def predict_scenes(cfg: ExperimentConfig, models: TrainedModels, inputs: np.ndarray) -> list[SceneImage]:
    x = model_inputs(np.asarray(inputs, dtype=np.float64), models.amplitude_tau)
    rgb = models.nets["rgb"].predict(x)
    depth = models.nets["depth"].predict(x) if "depth" in models.nets else np.zeros((len(x), 1) + rgb.shape[2:])
    mpp, _, _ = image_frame(cfg.world, cfg.data.image_size)
    return [SceneImage(r.transpose(1, 2, 0), d.transpose(1, 2, 0), mpp) for r, d in zip(rgb, depth)]


# ---------------------------------------------------------------- evaluation

def score_records(ids, preds, truths, tol: float) -> list[dict]:
    out = []
    for i, p, t in zip(ids, preds, truths):
        rec = {"id": int(i)}
        rec.update(evaluate_pair(p, t, tol))
        out.append(rec)
    return out


def aggregate(records: list[dict], method: str) -> dict:
    hits = [r["hit"] for r in records]
    return {
        "aggregate": method,
        "n": len(records),
        "iou": float(np.mean([r["iou"] for r in records])),
        "localization": float(np.mean(hits)),
    }


def sem(values) -> float:
    """Standard error of the mean: sample standard deviation over sqrt(k)."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float("nan")
    return float(v.std(ddof=1) / math.sqrt(v.size))


def baseline_predictions(cfg: ExperimentConfig, train_ds: Dataset, test_ds: Dataset, seed: int) -> dict:
    tol = cfg.eval.binarize_tol
    rnd = baseline_random(train_ds.scenes, seed)
    avg = baseline_avg_box(train_ds.scenes, tol)
    nn = baseline_nearest_neighbor(train_ds.inputs, train_ds.scenes)
    return {
        "random": [rnd() for _ in range(len(test_ds))],
        "avg_box": [avg() for _ in range(len(test_ds))],
        "nn": [nn(x) for x in test_ds.inputs],
    }


def tdoa_predictions(cfg: ExperimentConfig, test_ds: Dataset) -> list[SceneImage]:
    """Localized renderings; an unlocalizable episode yields an empty (all-background) scene."""
    out = []
    res = cfg.data.image_size
    mpp, _, _ = image_frame(cfg.world, res)
    for shape, bundle in zip(test_ds.shapes, test_ds.bundles):
        try:
            out.append(tdoa_predict_scene(bundle, cfg.world, shape, cfg.eval.grid_res_m, cfg.eval.tdoa_bounce, res))
        except UnlocalizableError:
            out.append(scene_from_mask(np.zeros((res, res), dtype=bool), 0.0, mpp))
    return out


def evaluate_methods(cfg, models, train_ds, test_ds, seed, methods=METHODS) -> dict:
    """Per-method record lists on the test split."""
    ids = range(len(test_ds))
    truths = test_ds.scenes
    tol = cfg.eval.binarize_tol
    preds = {}
    if "model" in methods:
        preds["model"] = predict_scenes(cfg, models, test_ds.inputs)
    if "tdoa" in methods:
        preds["tdoa"] = tdoa_predictions(cfg, test_ds)
    if any(m in methods for m in ("random", "avg_box", "nn")):
        base = baseline_predictions(cfg, train_ds, test_ds, seed)
        preds.update({m: base[m] for m in ("random", "avg_box", "nn") if m in methods})
    return {m: (preds[m], score_records(ids, preds[m], truths, tol)) for m in methods}


# ---------------------------------------------------------------- ablations

def box_center(scene: SceneImage, tol: float):
    m = binarize(scene, tol=tol)
    return None if m.empty else min_area_box(m).center


def mirror_center(center, res: int):
    """Point reflection through the image center, which is the box floor center."""
    c = (res - 1) / 2
    return 2 * c - center[0], 2 * c - center[1]


def flip_inputs(x: np.ndarray) -> np.ndarray:
    return np.stack([ablate_flip(InputTensor(s.transpose(1, 2, 0))).to_network() for s in x])


def shift_inputs(x: np.ndarray, frames: int) -> np.ndarray:
    return np.stack([ablate_temporal_shift(InputTensor(s.transpose(1, 2, 0)), frames).to_network() for s in x])


def shift_frames(cfg: ExperimentConfig, samples: int) -> int:
    """Spectrogram frames equivalent to ``samples`` at the configured source rate."""
    clip = int(round(cfg.acoustics.clip_len_s * cfg.world.sample_rate))
    return samples_to_frames(
        samples, cfg.eval.shift_source_rate, cfg.world.sample_rate, cfg.stft, clip, cfg.data.image_size
    )


def flip_diagnostic(cfg, preds, truths) -> dict:
    """Mean distance of flipped-input predictions to the mirrored and to the true centers."""
    tol, res = cfg.eval.binarize_tol, cfg.data.image_size
    mirrored, direct = [], []
    for p, t in zip(preds, truths):
        pc, tc = box_center(p, tol), box_center(t, tol)
        if pc is None:
            continue
        mc = mirror_center(tc, res)
        mirrored.append(math.hypot(pc[0] - mc[0], pc[1] - mc[1]))
        direct.append(math.hypot(pc[0] - tc[0], pc[1] - tc[1]))
    return {
        "diagnostic": "flip",
        "n": len(mirrored),
        "mirrored_error_px": float(np.mean(mirrored)) if mirrored else None,
        "unmirrored_error_px": float(np.mean(direct)) if direct else None,
    }


def mean_center(preds, tol) -> tuple[float, float] | None:
    cs = [c for c in (box_center(p, tol) for p in preds) if c is not None]
    if not cs:
        return None
    a = np.asarray(cs)
    return float(a[:, 0].mean()), float(a[:, 1].mean())
