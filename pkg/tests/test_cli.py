import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from mb2l.cli import main
from mb2l.errors import NumericalError
from mb2l.trainer import TrainConfig, save_checkpoint
from mb2l.model import build_model, config_for_samples
from mb2l.datasets import generate_synthetic

TINY_MODEL = {
    "token_dim": 8,
    "embed_dim": 8,
    "eeg_width": 4,
    "image_depth": 2,
    "image_width": 4,
    "frozen_depth": 1,
    "frozen_width": 4,
    "frozen_out_dim": 8,
}

GEN_FLAGS = [
    "--train-concepts", "6", "--test-concepts", "6", "--channels", "5",
    "--time-samples", "16", "--image-size", "16", "--images-per-concept", "1",
]


def gen_data(out) -> Path:
    assert main(["generate-data", "--out", str(out), *GEN_FLAGS, "--seed", "0"]) == 0
    return Path(out)


def write_config(path, data_dir, train=None, model=None, output=None):
    doc = {"data": {"path": str(data_dir)}, "model": {**TINY_MODEL, **(model or {})}}
    doc["train"] = train or {"epochs": 2, "batch_size": 6, "learning_rate": 1e-3}
    if output:
        doc["output"] = {"dir": str(output)}
    Path(path).write_text(json.dumps(doc))
    return str(path)


def tree_digest(root) -> dict:
    out = {}
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


# ---------------------------------------------------------------------------
# generate-data


def test_generate_data_writes_layout(tmp_path, capsys):
    root = gen_data(tmp_path / "ds")
    assert (root / "data" / "subject_00" / "train.f16").exists()
    assert (root / "data" / "subject_00" / "test.meta").exists()
    assert any((root / "images").iterdir())
    assert "6 train / 6 test samples" in capsys.readouterr().out


def test_generate_data_rejects_zero_test_concepts(tmp_path, capsys):
    code = main(["generate-data", "--out", str(tmp_path / "x"), "--test-concepts", "0"])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_generate_data_seeded_runs_identical(tmp_path):
    a = gen_data(tmp_path / "a")
    b = gen_data(tmp_path / "b")
    da, db = tree_digest(a), tree_digest(b)
    assert da == db and len(da) > 0


def test_generate_data_unwritable_path(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code = main(["generate-data", "--out", str(blocker / "nested"), *GEN_FLAGS])
    assert code == 2
    assert capsys.readouterr().err


def test_mb2l_out_reroots_relative_paths(tmp_path, monkeypatch):
    monkeypatch.setenv("MB2L_OUT", str(tmp_path))
    assert main(["generate-data", "--out", "rooted", *GEN_FLAGS]) == 0
    assert (tmp_path / "rooted" / "data").is_dir()


# ---------------------------------------------------------------------------
# train


def test_train_writes_artifacts(tmp_path, capsys):
    data = gen_data(tmp_path / "ds")
    out = tmp_path / "run"
    cfg = write_config(tmp_path / "run.json", data, output=out)
    assert main(["train", cfg]) == 0
    assert (out / "checkpoint.npz").exists()
    with open(out / "history.csv", newline="") as fh:
        history = list(csv.DictReader(fh))
    assert len(history) == 2
    assert set(history[0]) == {"epoch", "train_loss", "val_top1"}
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["train"]["alpha_high"] == 0.5  # intra-subject default
    assert "best val top-1" in capsys.readouterr().out


def test_train_preset_lands_in_resolved_config(tmp_path):
    data = gen_data(tmp_path / "ds")
    out = tmp_path / "run"
    cfg = write_config(
        tmp_path / "run.json", data,
        train={"preset": "paper-inter", "epochs": 1, "batch_size": 6},
        output=out,
    )
    assert main(["train", cfg]) == 0
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["train"]["preset"] == "paper-inter"
    assert resolved["train"]["alpha_high"] == 0.1


def test_train_missing_dataset_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "run.json", tmp_path / "nowhere", output=tmp_path / "o")
    assert main(["train", cfg]) == 2
    assert "error:" in capsys.readouterr().err


def test_train_bad_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"data": {"path": "d"}, "train": {"batchsize": 4}}))
    assert main(["train", str(path)]) == 2
    assert "train.batchsize" in capsys.readouterr().err


def test_numerical_failure_exits_3(tmp_path, monkeypatch, capsys):
    data = gen_data(tmp_path / "ds")
    cfg = write_config(tmp_path / "run.json", data, output=tmp_path / "o")

    def explode(*a, **k):
        raise NumericalError("non-finite training loss at epoch 0 step 1")

    monkeypatch.setattr("mb2l.cli.train", explode)
    assert main(["train", cfg]) == 3
    assert "numerical failure" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# eval


def trained_run(tmp_path, train=None):
    data = gen_data(tmp_path / "ds")
    out = tmp_path / "run"
    cfg = write_config(tmp_path / "run.json", data, train=train, output=out)
    assert main(["train", cfg]) == 0
    return data, out / "checkpoint.npz"


def test_eval_emits_metrics_and_similarity(tmp_path, capsys):
    data, ckpt = trained_run(tmp_path)
    out = tmp_path / "eval"
    assert main(["eval", str(ckpt), str(data), "--out", str(out)]) == 0
    with open(out / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["level"] for r in rows] == ["low", "high", "fused"]
    for row in rows:
        assert 0.0 <= float(row["top1"]) <= float(row["top5"]) <= 1.0
    assert (out / "similarity_fused.csv").exists()
    assert (out / "similarity_fused.png").exists()
    assert (out / "misses.csv").exists()
    assert "fused:" in capsys.readouterr().out


def test_eval_level_filter(tmp_path):
    data, ckpt = trained_run(tmp_path)
    out = tmp_path / "eval_low"
    assert main(["eval", str(ckpt), str(data), "--level", "low", "--out", str(out)]) == 0
    with open(out / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["level"] == "low"
    assert (out / "similarity_low.png").exists()


def test_eval_heatmap_size_honors_scale(tmp_path):
    from PIL import Image

    data, ckpt = trained_run(tmp_path)
    out = tmp_path / "eval_scaled"
    assert main(["eval", str(ckpt), str(data), "--scale", "3", "--out", str(out)]) == 0
    with Image.open(out / "similarity_fused.png") as img:
        assert img.size == (6 * 3, 6 * 3)


def test_eval_miss_panels_have_six_tiles(tmp_path):
    from PIL import Image

    data, ckpt = trained_run(tmp_path)
    out = tmp_path / "eval_misses"
    assert main(["eval", str(ckpt), str(data), "--out", str(out)]) == 0
    with open(out / "misses.csv", newline="") as fh:
        misses = list(csv.DictReader(fh))
    panels = sorted((out / "misses").glob("*.png")) if misses else []
    assert len(panels) == len(misses)
    if panels:
        with Image.open(panels[0]) as img:
            # query + top-5 retrieved, 16 px tiles, 2 px gaps
            assert img.size == (6 * 16 + 5 * 2, 16)


def test_eval_overfit_train_split_is_perfect(tmp_path):
    # memorization check: overfit a tiny training set (validating on it so
    # the best snapshot is the memorized state), then evaluate on it
    from mb2l.datasets import load_things_format
    from mb2l.trainer import train

    data = gen_data(tmp_path / "ds")
    train_set, _ = load_things_format(data)
    cfg = TrainConfig(
        batch_size=6, epochs=200, learning_rate=3e-3, weight_decay=0.0,
        early_stop_patience=200, seed=0,
    )
    result = train(train_set, train_set, cfg, model_overrides=dict(TINY_MODEL))
    ckpt = tmp_path / "overfit.npz"
    save_checkpoint(ckpt, result.model, cfg)

    out = tmp_path / "eval_train"
    assert main(["eval", str(ckpt), str(data), "--split", "train", "--out", str(out)]) == 0
    with open(out / "metrics.csv", newline="") as fh:
        rows = {r["level"]: r for r in csv.DictReader(fh)}
    assert float(rows["fused"]["top1"]) == 1.0


def test_eval_incompatible_time_axis_exits_2(tmp_path, capsys):
    data, ckpt = trained_run(tmp_path)
    other = tmp_path / "other"
    assert main([
        "generate-data", "--out", str(other), "--train-concepts", "6",
        "--test-concepts", "6", "--channels", "5", "--time-samples", "12",
        "--image-size", "16", "--images-per-concept", "1",
    ]) == 0
    assert main(["eval", str(ckpt), str(other), "--out", str(tmp_path / "x")]) == 2
    assert "time samples" in capsys.readouterr().err


def test_eval_missing_checkpoint_exits_2(tmp_path, capsys):
    data = gen_data(tmp_path / "ds")
    assert main(["eval", str(tmp_path / "none.npz"), str(data)]) == 2
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# visualize


def fresh_checkpoint(tmp_path, **overrides):
    train_set, _ = generate_synthetic(
        n_train_concepts=4, n_test_concepts=2, n_channels=5, T=16,
        image_size=16, images_per_concept=1, seed=0,
    )
    model = build_model(config_for_samples(train_set, seed=1, **TINY_MODEL, **overrides))
    path = tmp_path / "fresh.npz"
    save_checkpoint(path, model, TrainConfig())
    return path


def test_visualize_blur_matches_initialization(tmp_path):
    from PIL import Image

    ckpt = fresh_checkpoint(tmp_path)
    out = tmp_path / "fig"
    assert main(["visualize", str(ckpt), "blur", "--out", str(out)]) == 0
    with Image.open(out / "blur_gate.png") as img:
        assert img.mode == "L" and img.size == (16, 16)
        pixels = np.asarray(img)
    # same function evaluated directly: logistic gate over the radial grid
    from mb2l.foveation import radial_map

    r = radial_map(16, 16).values
    expected = 1.0 / (1.0 + np.exp(-10.0 * (r - 0.25)))
    np.testing.assert_array_equal(pixels, (expected * 255.0).round().astype(np.uint8))


def test_visualize_blur_curve_crosses_half_at_fovea_radius(tmp_path):
    ckpt = fresh_checkpoint(tmp_path)
    out = tmp_path / "fig"
    assert main(["visualize", str(ckpt), "blur", "--out", str(out)]) == 0
    with open(out / "blur_curve.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 256
    rs = np.array([float(r["r"]) for r in rows])
    ws = np.array([float(r["w"]) for r in rows])
    nearest = int(np.argmin(np.abs(rs - 0.25)))
    assert abs(ws[nearest] - 0.5) < 0.02


def test_visualize_free_prior_emits_grid(tmp_path):
    ckpt = fresh_checkpoint(tmp_path, prior="free")
    out = tmp_path / "fig"
    assert main(["visualize", str(ckpt), "blur", "--out", str(out)]) == 0
    grid = np.loadtxt(out / "blur_grid.csv", delimiter=",")
    assert grid.shape == (16, 16)
    np.testing.assert_allclose(grid, 0.5, atol=1e-7)  # fresh grid starts flat


def test_visualize_channels_csv_shape(tmp_path):
    ckpt = fresh_checkpoint(tmp_path)
    out = tmp_path / "fig"
    assert main(["visualize", str(ckpt), "channels", "--out", str(out)]) == 0
    with open(out / "channels.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert list(rows[0]) == ["channel", "w_low", "w_high"]
    for row in rows:
        assert 0.0 <= float(row["w_low"]) <= 1.0
        assert 0.0 <= float(row["w_high"]) <= 1.0


def test_visualize_similarity_needs_data(tmp_path, capsys):
    ckpt = fresh_checkpoint(tmp_path)
    assert main(["visualize", str(ckpt), "similarity", "--out", str(tmp_path / "f")]) == 2
    assert "--data" in capsys.readouterr().err


def test_visualize_similarity_writes_heatmap(tmp_path):
    data, ckpt = trained_run(tmp_path)
    out = tmp_path / "fig"
    assert main([
        "visualize", str(ckpt), "similarity", "--data", str(data), "--out", str(out),
    ]) == 0
    assert (out / "similarity_fused.png").exists()
    assert (out / "similarity_fused.csv").exists()


def test_visualize_blur_without_abvp_exits_2(tmp_path, capsys):
    ckpt = fresh_checkpoint(tmp_path, abvp_on=False)
    assert main(["visualize", str(ckpt), "blur", "--out", str(tmp_path / "f")]) == 2
    assert "foveated" in capsys.readouterr().err


def test_visualize_unknown_what_is_usage_error(tmp_path):
    ckpt = fresh_checkpoint(tmp_path)
    with pytest.raises(SystemExit) as excinfo:
        main(["visualize", str(ckpt), "spectrogram"])
    assert excinfo.value.code == 2


# ---------------------------------------------------------------------------
# ablate


def test_ablate_full_grid(tmp_path, capsys):
    data = gen_data(tmp_path / "ds")
    cfg = write_config(tmp_path / "run.json", data, train={"epochs": 1, "batch_size": 6})
    out = tmp_path / "ablation"
    assert main([
        "ablate", "--config", cfg, "--seeds", "0", "--out", str(out),
    ]) == 0
    with open(out / "results.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    with open(out / "summary.csv", newline="") as fh:
        summary = list(csv.DictReader(fh))
    assert len(summary) == 6
    stdout = capsys.readouterr().out
    assert "full" in stdout and "no-ABVP" in stdout


def test_ablate_needs_data_or_config(capsys):
    assert main(["ablate", "--seeds", "0"]) == 2
    assert "needs --data" in capsys.readouterr().err


def test_ablate_bad_seeds(tmp_path, capsys):
    data = gen_data(tmp_path / "ds")
    assert main(["ablate", "--data", str(data), "--seeds", "a,b"]) == 2
    assert "comma-separated" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main(["transcend"])
    assert excinfo.value.code == 2
