"""Command-line harness: init, gen, train, eval, ablate and tdoa."""
from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from . import io
from .config import PRESETS, ConfigError, ExperimentConfig
from .dsp import SilentChannelError
from .nn.checkpoint import CheckpointError
from .nn.train import NumericError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
log = logging.getLogger("vibroscene")


def _config(args) -> ExperimentConfig:
    if args.config:
        return ExperimentConfig.load(args.config)
    return PRESETS[args.scale]()


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise ConfigError(f"{path} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _seeds(cfg, args) -> list[int]:
    return [args.seed] if args.seed is not None else list(cfg.train_seeds)


def _checkpoints(cfg, args, seeds, suffix="") -> list[tuple[int, Path]]:
    if args.checkpoint:
        paths = [Path(p) for p in args.checkpoint.split(",")]
        if len(paths) != len(seeds):
            seeds = list(range(len(paths)))
        return list(zip(seeds, paths))
    run = Path(cfg.paths.run_dir)
    return [(s, run / f"seed{s}{suffix}.bbx") for s in seeds]


def _magnitudes(args, default) -> list[int]:
    if args.magnitude is None:
        return list(default)
    try:
        return [int(v) for v in args.magnitude.split(",")]
    except ValueError as e:
        raise ConfigError(f"bad --magnitude {args.magnitude!r}") from e


def _load_data(cfg):
    return ex.splits(cfg, ex.read_dataset(cfg, Path(cfg.paths.dataset_dir)))


def _write_report(path: Path, records, method: str, extra=()) -> dict:
    agg = ex.aggregate(records, method)
    io.write_jsonl(path, [*records, *extra, agg])
    return agg


def cmd_init(cfg, args) -> None:
    out = Path(args.out or "config.json")
    if out.exists() and not args.force:
        raise ConfigError(f"{out} exists (use --force to overwrite)")
    out.write_text(cfg.to_json(), encoding="utf-8")
    print(out)


def cmd_gen(cfg, args) -> None:
    out = _prepare_out(Path(args.out or cfg.paths.dataset_dir), args.force)
    ds = ex.write_dataset(cfg, out, args.seed)
    print(f"{len(ds)} episodes -> {out}")


def cmd_train(cfg, args) -> None:
    out = Path(args.out or cfg.paths.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, val_ds, _ = _load_data(cfg)
    tau = cfg.eval.amplitude_tau if args.which == "amplitude" else None
    suffix = ".amplitude" if tau is not None else ""
    for seed in _seeds(cfg, args):

        def progress(target, epoch, r):
            log.info("seed %d %s epoch %d train %.6f val %.6f", seed, target, epoch, r.train_loss[-1], r.val_loss[-1])

        models, traces = ex.train_models(cfg, train_ds, val_ds, seed, tau, log=progress)
        path = Path(args.checkpoint) if args.checkpoint else out / f"seed{seed}{suffix}.bbx"
        models.save(path)
        rows = [
            {"target": t, "epoch": e, "train_loss": tr.train_loss[e], "val_loss": tr.val_loss[e]}
            for t, tr in traces.items()
            for e in range(len(tr.train_loss))
        ]
        rows += [
            {"target": t, "final_val_loss": tr.final_val_loss} for t, tr in traces.items()
        ]
        io.write_jsonl(out / f"seed{seed}{suffix}.losses.jsonl", rows)
        print(path)


def _export_predictions(out: Path, preds) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(preds):
        io.write_ppm(out / f"{i:05d}.ppm", p.rgb)
        io.write_pgm16(out / f"{i:05d}.pgm", p.depth)


def _summary(per_seed: dict) -> list[dict]:
    rows = []
    for method, aggs in per_seed.items():
        ious = [a["iou"] for a in aggs]
        locs = [a["localization"] for a in aggs]
        rows.append({
            "method": method,
            "seeds": len(aggs),
            "iou_mean": float(np.mean(ious)),
            "iou_sem": ex.sem(ious),
            "localization_mean": float(np.mean(locs)),
            "localization_sem": ex.sem(locs),
        })
    return rows


def cmd_eval(cfg, args) -> None:
    out = _prepare_out(Path(args.out or Path(cfg.paths.run_dir) / "eval"), args.force)
    train_ds, _, test_ds = _load_data(cfg)
    per_seed = {m: [] for m in ex.METHODS}
    tdoa = None
    for seed, path in _checkpoints(cfg, args, _seeds(cfg, args)):
        models = ex.TrainedModels.load(cfg, path)
        methods = tuple(m for m in ex.METHODS if m != "tdoa" or tdoa is None)
        results = ex.evaluate_methods(cfg, models, train_ds, test_ds, seed, methods)
        if tdoa is None:
            tdoa = results["tdoa"]
        results["tdoa"] = tdoa  # deterministic and seed-independent
        seed_dir = out / f"seed{seed}"
        seed_dir.mkdir()
        for method, (preds, records) in results.items():
            per_seed[method].append(_write_report(seed_dir / f"{method}.jsonl", records, method))
        _export_predictions(seed_dir / "pred", results["model"][0])
    rows = _summary(per_seed)
    io.write_jsonl(out / "summary.jsonl", rows)
    for r in rows:
        print(f"{r['method']:8s} loc {r['localization_mean']:.3f} +- {r['localization_sem']:.3f}  "
              f"iou {r['iou_mean']:.3f} +- {r['iou_sem']:.3f}")


def cmd_ablate(cfg, args) -> None:
    if args.which is None:
        raise ConfigError("--which flip|amplitude|shift is required")
    suffix = ".amplitude" if args.which == "amplitude" else ""
    seed, path = _checkpoints(cfg, args, _seeds(cfg, args)[:1], suffix)[0]
    models = ex.TrainedModels.load(cfg, path)
    if args.which == "amplitude":
        if models.amplitude_tau is None:
            raise ConfigError(
                f"{path} was trained on unablated inputs; the amplitude ablation needs a checkpoint "
                "retrained with `train --which amplitude`"
            )
    elif models.amplitude_tau is not None:
        raise ConfigError(f"{path} is an amplitude-ablated checkpoint")
    out = _prepare_out(Path(args.out or Path(cfg.paths.run_dir) / f"ablate_{args.which}"), args.force)
    _, _, test_ds = _load_data(cfg)
    truths = test_ds.scenes
    tol = cfg.eval.binarize_tol
    ids = range(len(test_ds))

    def report(name, preds, extra=()):
        records = ex.score_records(ids, preds, truths, tol)
        agg = _write_report(out / f"{name}.jsonl", records, name, [*extra] + [
            {"diagnostic": "mean_center", "center": ex.mean_center(preds, tol)}
        ])
        print(f"{name:16s} loc {agg['localization']:.3f} iou {agg['iou']:.3f}")

    def predict(x):
        return ex.predict_scenes(cfg, models, x)

    if args.which == "flip":
        preds = predict(ex.flip_inputs(test_ds.inputs))
        report("flip", preds, [ex.flip_diagnostic(cfg, preds, truths)])
    elif args.which == "amplitude":
        report("amplitude", predict(test_ds.inputs))
    else:
        for m in _magnitudes(args, cfg.eval.shift_magnitudes_samples):
            frames = ex.shift_frames(cfg, m)
            report(f"shift_{m}", predict(ex.shift_inputs(test_ds.inputs, frames)),
                   [{"diagnostic": "shift", "samples": m, "frames": frames}])


def cmd_tdoa(cfg, args) -> None:
    out = _prepare_out(Path(args.out or Path(cfg.paths.run_dir) / "tdoa"), args.force)
    _, _, test_ds = _load_data(cfg)
    preds = ex.tdoa_predictions(cfg, test_ds)
    records = ex.score_records(range(len(test_ds)), preds, test_ds.scenes, cfg.eval.binarize_tol)
    agg = _write_report(out / "tdoa.jsonl", records, "tdoa")
    print(f"tdoa     loc {agg['localization']:.3f} iou {agg['iou']:.3f}")


COMMANDS = {
    "init": cmd_init,
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "tdoa": cmd_tdoa,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vibroscene", description=__doc__)
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", help="experiment JSON (default: the --scale preset)")
    p.add_argument("--scale", choices=list(PRESETS), default="desk")
    p.add_argument("--seed", type=int, help="data seed for gen, single training seed otherwise")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--force", action="store_true", help="overwrite existing output")
    p.add_argument("--checkpoint", help="checkpoint path (comma-separated list for eval)")
    p.add_argument("--which", choices=["flip", "amplitude", "shift"])
    p.add_argument("--magnitude", help="shift magnitudes in source-rate samples, e.g. 0,100,500")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ex.DataError, io.FormatError, CheckpointError, SilentChannelError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
