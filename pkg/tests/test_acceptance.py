"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed inline and again in the terminal
summary) before asserting. Criteria 7 and 8 share one session fixture that
generates the 800/100/100 desk dataset and trains three RGB networks plus one
amplitude-ablated network; that fixture takes most of an hour on one CPU.
"""
import dataclasses
import hashlib
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from oracles import adam_by_hand, brute_iou, check_case, gradient_cases, rotation_sweep_box
from test_tdoa import localization_errors
from vibroscene import cli, io
from vibroscene import experiment as ex
from vibroscene.config import DataConfig, PathsConfig, TrainingConfig, desk_config
from vibroscene.eval import convex_hull, iou, mask_points, min_area_box
from vibroscene.nn import checkpoint
from vibroscene.nn import functional as F
from vibroscene.nn.layers import ParamStore, Tensor
from vibroscene.nn.model import ModelConfig, SceneNet
from vibroscene.nn.optim import AdamState, adam_step, lr_schedule
from vibroscene.simulator import AcousticsConfig
from vibroscene.tdoa import gcc_phat

ACCEPTANCE_EPOCHS = 15
SHIFT_SAMPLES = (0, 500, 2000)  # at the 44 kHz source rate: 0, about 1 and about 6 spectrogram frames
TIME_BUDGET_S = 2 * 3600


# ------------------------------------------------------------------ 1


def test_criterion_1_gradients():
    start = time.perf_counter()
    cases = gradient_cases(seed=11)
    errors = {case[0]: check_case(case, eps=1e-3) for case in cases}
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    ok = len(cases) >= 20 and worst < 1e-3 and elapsed < 120
    record(1, ok, f"{len(cases)} shapes, max rel err {worst:.2e}, {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------------ 2


def test_criterion_2_architecture():
    cfg = ModelConfig()
    rgb = SceneNet(cfg).shape_trace()
    depth = SceneNet(dataclasses.replace(cfg, out_channels=1)).shape_trace()
    enc_sizes = [128] + [s for s, _ in rgb["encoder"]]
    dec_sizes = [s for s, _ in rgb["decoder"]]
    ok = (
        enc_sizes == [128, 64, 32, 16, 8, 4, 2, 1]
        and cfg.enc_filters == (32, 32, 64, 128, 128, 128, 128)
        and [c for _, c in rgb["encoder"]] == [2 * f for f in cfg.enc_filters]
        and dec_sizes == [2, 4, 8, 16, 32, 64, 128]
        and [c for _, c in rgb["decoder"][:-1]] == [2 * f for f in cfg.dec_filters]
        and rgb["decoder"][-1] == (128, 3)
        and depth["decoder"][-1] == (128, 1)
    )
    y = SceneNet(ModelConfig.desk(), seed=0).forward(np.random.default_rng(0).normal(size=(1, 4, 128, 128)) * 50)
    ok = ok and bool(np.all((y > 0) & (y < 1)))
    record(2, ok, f"encoder {enc_sizes}, decoder {dec_sizes}, heads 3/1 channels with sigmoid")
    assert ok


# ------------------------------------------------------------------ 3


def test_criterion_3_gcc_phat():
    rng = np.random.default_rng(2024)
    hits, anti = 0, 0.0
    n, trials = 4096, 200
    for _ in range(trials):
        delay = int(rng.integers(-200, 201))
        src = rng.normal(size=n + 400)
        x = src[200:200 + n]
        y = src[200 - delay:200 - delay + n]  # y[k] = x[k - delay]
        noise = 10 ** (-20 / 20)  # 20 dB SNR per channel
        x = x + rng.normal(scale=noise, size=n)
        y = y + rng.normal(scale=noise, size=n)
        a = gcc_phat(x, y, 256)
        b = gcc_phat(y, x, 256)
        hits += abs(a.lag_samples - (-delay)) <= 1
        anti = max(anti, abs(a.lag_samples + b.lag_samples))
    ok = hits >= 0.99 * trials and anti <= 1e-3
    record(3, ok, f"{hits}/{trials} delays within 1 sample at 20 dB SNR, max antisymmetry {anti:.1e} samples")
    assert ok


# ------------------------------------------------------------------ 4


def test_criterion_4_tdoa_localization():
    clean = localization_errors(200, AcousticsConfig.clean(), multi=False)
    hard = localization_errors(200, AcousticsConfig(), multi=True)
    frac = float(np.mean(clean <= 0.005 + 0.01))
    ok = frac >= 0.95 and np.median(hard) > np.median(clean)
    record(4, ok, f"{frac:.1%} within grid + 1 cm; median error noiseless {np.median(clean) * 1000:.1f} mm "
                  f"vs echoic multi-bounce {np.median(hard) * 1000:.1f} mm")
    assert ok


# ------------------------------------------------------------------ 5


def random_convex_mask(rng, size=40):
    """Pixels whose centers lie inside the hull of a few random points."""
    pts = rng.uniform(2, size - 3, size=(int(rng.integers(3, 9)), 2))
    hull = convex_hull(pts)
    rows, cols = np.mgrid[0:size, 0:size]
    inside = np.ones((size, size), bool)
    for a, b in zip(hull, np.roll(hull, -1, axis=0)):
        inside &= (b[0] - a[0]) * (rows - a[1]) - (b[1] - a[1]) * (cols - a[0]) >= 0
    return inside


def test_criterion_5_metric_oracles():
    rng = np.random.default_rng(5)
    iou_exact = 0
    for _ in range(100):
        a = rng.uniform(size=(24, 24)) < rng.uniform(0.05, 0.6)
        b = rng.uniform(size=(24, 24)) < rng.uniform(0.05, 0.6)
        iou_exact += iou(a, b) == brute_iou(a, b)
    worst, masks = 0.0, 0
    while masks < 50:
        m = random_convex_mask(rng)
        if m.sum() < 3:
            continue
        masks += 1
        sweep, _ = rotation_sweep_box(mask_points(m), step_deg=0.1)
        area = min_area_box(m).area
        worst = max(worst, abs(area - sweep) / sweep)
    ok = iou_exact == 100 and worst <= 0.01
    record(5, ok, f"IoU exact on {iou_exact}/100 pairs; box area vs 0.1 degree sweep max rel diff {worst:.1e} on 50 masks")
    assert ok


# ------------------------------------------------------------------ 6


def test_criterion_6_losses_and_optimizer():
    worst = 0.0
    for fn, grad in ((F.mse_loss, lambda p, t: 2 * (p - t)), (F.l1_loss, lambda p, t: math.copysign(1.0, p - t))):
        store = ParamStore()
        store.add("p", Tensor(np.array([0.9])))
        state = AdamState()
        p_hand, grads = 0.9, []
        for _ in range(2):
            store.zero_grad()
            loss, g = fn(store["p"].data, np.array([0.2]))
            want_loss = (p_hand - 0.2) ** 2 if fn is F.mse_loss else abs(p_hand - 0.2)
            worst = max(worst, abs(loss - want_loss), abs(g[0] - grad(p_hand, 0.2)))
            grads.append(grad(p_hand, 0.2))
            store["p"].grad[:] = g
            adam_step(store, 0.01, state)
            p_hand = adam_by_hand(0.9, grads, 0.01)[-1]
            worst = max(worst, abs(store["p"].data[0] - p_hand))
    lrs = [lr_schedule(e) for e in (0, 19, 20, 49, 50, 99, 100, 499)]
    lr_ok = lrs == [0.001, 0.001, 0.0005, 0.0005, 0.00025, 0.00025, 0.000125, 0.000125]
    ok = worst <= 1e-12 and lr_ok
    record(6, ok, f"2-step traces max deviation {worst:.1e}; lr schedule {sorted(set(lrs), reverse=True)}")
    assert ok


# ------------------------------------------------------------------ 7 and 8: trained desk models


@pytest.fixture(scope="session")
def desk():
    cfg = dataclasses.replace(
        desk_config(), training=TrainingConfig(epochs=ACCEPTANCE_EPOCHS, targets=("rgb",))
    )
    start = time.perf_counter()
    ds = ex.load_or_generate(cfg)
    train_ds, val_ds, test_ds = ex.splits(cfg, ds)
    models = {s: ex.train_models(cfg, train_ds, val_ds, s)[0] for s in cfg.train_seeds}
    results = {
        s: ex.evaluate_methods(cfg, m, train_ds, test_ds, s, ("model", "random", "avg_box"))
        for s, m in models.items()
    }
    elapsed = time.perf_counter() - start
    return {
        "cfg": cfg, "train": train_ds, "val": val_ds, "test": test_ds,
        "models": models, "results": results, "elapsed": elapsed,
    }


def agg(results, method):
    return ex.aggregate(results[method][1], method)


@pytest.mark.slow
def test_criterion_7_learning_signal(desk):
    lines, ok = [], True
    locs, ious = [], []
    for s, res in desk["results"].items():
        m, r, a = agg(res, "model"), agg(res, "random"), agg(res, "avg_box")
        locs.append(m["localization"])
        ious.append(m["iou"])
        seed_ok = m["localization"] >= r["localization"] + 0.2 and m["iou"] > a["iou"]
        ok &= seed_ok
        lines.append(f"seed {s}: loc {m['localization']:.2f} vs random {r['localization']:.2f}, "
                     f"IoU {m['iou']:.3f} vs avg box {a['iou']:.3f}")
    ok &= desk["elapsed"] <= TIME_BUDGET_S and ACCEPTANCE_EPOCHS <= 100
    summary = (f"model loc {np.mean(locs):.3f} +- {ex.sem(locs):.3f}, IoU {np.mean(ious):.3f} +- {ex.sem(ious):.3f} "
               f"(mean +- SEM, 3 seeds, {ACCEPTANCE_EPOCHS} epochs, {desk['elapsed'] / 60:.0f} min); " + "; ".join(lines))
    record(7, ok, summary)
    assert ok


def center_shift(preds, base, tol):
    a, b = ex.mean_center(preds, tol), ex.mean_center(base, tol)
    return None if a is None or b is None else (a[0] - b[0], a[1] - b[1])


@pytest.mark.slow
def test_criterion_8_ablations(desk):
    cfg, test_ds = desk["cfg"], desk["test"]
    tol = cfg.eval.binarize_tol
    truths = test_ds.scenes
    parts, ok = [], True

    # flip at test time, every seed
    mirrored, direct = [], []
    for s, models in desk["models"].items():
        preds = ex.predict_scenes(cfg, models, ex.flip_inputs(test_ds.inputs))
        d = ex.flip_diagnostic(cfg, preds, truths)
        mirrored.append(d["mirrored_error_px"])
        direct.append(d["unmirrored_error_px"])
    flip_ok = np.mean(mirrored) < np.mean(direct)
    parts.append(f"flip: mirrored error {np.mean(mirrored):.1f}px vs unmirrored {np.mean(direct):.1f}px")

    # temporal shift at test time: mics 1, 2 later and mics 3, 4 earlier, so the source should
    # appear closer to mics 3 and 4, which sit on the +y and +x walls (+row, +column)
    expected = np.array([1.0, 1.0]) / math.sqrt(2)
    frames = [ex.shift_frames(cfg, m) for m in SHIFT_SAMPLES]
    progress, shift_locs = [], []
    for s, models in desk["models"].items():
        base = desk["results"][s]["model"][0]
        proj, locs = [], []
        for f in frames:
            preds = ex.predict_scenes(cfg, models, ex.shift_inputs(test_ds.inputs, f))
            delta = center_shift(preds, base, tol)
            proj.append(float(np.dot(delta, expected)) if delta is not None else float("nan"))
            locs.append(ex.aggregate(ex.score_records(range(len(truths)), preds, truths, tol), "m")["localization"])
        progress.append(proj)
        shift_locs.append(locs)
    proj = np.mean(progress, axis=0)
    locs = np.mean(shift_locs, axis=0)
    shift_ok = bool(proj[0] < proj[1] < proj[2] and locs[2] < locs[0])
    parts.append(f"shift {list(SHIFT_SAMPLES)} samples = {frames} frames: centroid displacement along expected "
                 f"direction {np.round(proj, 2).tolist()}px, localization {np.round(locs, 3).tolist()}")

    # amplitude: retrain on thresholded spectrograms, compare with the unablated seed-0 network
    tau = cfg.eval.amplitude_tau
    amp_models, _ = ex.train_models(cfg, desk["train"], desk["val"], 0, amplitude_tau=tau)
    amp = ex.aggregate(
        ex.score_records(range(len(truths)), ex.predict_scenes(cfg, amp_models, test_ds.inputs), truths, tol), "amp"
    )
    full = agg(desk["results"][0], "model")
    amp_ok = amp["localization"] < full["localization"] and amp["iou"] < full["iou"]
    parts.append(f"amplitude (tau {tau}): loc {amp['localization']:.2f} vs {full['localization']:.2f}, "
                 f"IoU {amp['iou']:.3f} vs {full['iou']:.3f}")

    ok = flip_ok and shift_ok and amp_ok
    status = f"flip {'ok' if flip_ok else 'FAIL'}, shift {'ok' if shift_ok else 'FAIL'}, amplitude {'ok' if amp_ok else 'FAIL'}"
    record(8, ok, status + "; " + "; ".join(parts))
    assert ok


# ------------------------------------------------------------------ 9 and 10


def digest(root: Path) -> dict:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


@pytest.fixture(scope="module")
def twin_runs(tmp_path_factory, monkeypatch_module):
    roots = []
    for name in ("first", "second"):
        root = tmp_path_factory.mktemp(name)
        monkeypatch_module.chdir(root)
        cfg = dataclasses.replace(
            desk_config(),
            data=DataConfig(n_episodes=12, split=(0.5, 0.25, 0.25)),
            training=TrainingConfig(epochs=2, batch_size=4),
            paths=PathsConfig(),
            train_seeds=(0, 1),
        )
        Path("config.json").write_text(cfg.to_json())
        c = ["--config", "config.json"]
        for cmd in (["gen"], ["train"], ["eval"], ["tdoa"], ["ablate", "--which", "flip"]):
            assert cli.main([*cmd, *c]) == 0
        roots.append(root)
    return roots


@pytest.fixture(scope="module")
def monkeypatch_module():
    mp = pytest.MonkeyPatch()
    yield mp
    mp.undo()


def test_criterion_9_determinism(twin_runs):
    a, b = (digest(r) for r in twin_runs)
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    kinds = sorted({Path(k).suffix for k in a})
    ok = not differing and any(k.endswith(".bbx") for k in a) and any("eval" in k for k in a)
    record(9, ok, f"{len(a)} files ({', '.join(kinds)}) byte-identical across two runs" if ok
           else f"differing files: {differing[:5]}")
    assert ok


def test_criterion_10_round_trips(twin_runs, tmp_path):
    root = twin_runs[0]
    results = {}
    ckpt = root / "runs" / "seed0.bbx"
    results["checkpoint"] = checkpoint.dumps(checkpoint.load(ckpt)) == ckpt.read_bytes()
    wav = next((root / "data" / "episodes").glob("*.wav"))
    io.write_wav(tmp_path / "x.wav", io.read_wav(wav))
    results["wav"] = (tmp_path / "x.wav").read_bytes() == wav.read_bytes()
    ppm = next((root / "data" / "episodes").glob("*.ppm"))
    results["ppm"] = io.encode_ppm(io.read_ppm(ppm)) == ppm.read_bytes()
    pgm = next((root / "data" / "episodes").glob("*.pgm"))
    results["pgm"] = io.encode_pgm16(io.read_pgm16(pgm)) == pgm.read_bytes()
    man = root / "data" / "manifest.jsonl"
    results["manifest"] = io.dumps_jsonl(io.read_jsonl(man)).encode() == man.read_bytes()
    ok = all(results.values())
    record(10, ok, ", ".join(f"{k} {'identical' if v else 'CHANGED'}" for k, v in results.items()))
    assert ok
