"""Command-line surface: data generation, training, evaluation, ablation
grids, and figure/CSV emission.

Exit codes are a stable contract: 0 success, 2 config or usage error,
3 numerical failure.  The MB2L_OUT environment variable re-roots every
relative output path.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import load_run_config, resolved_document
from .datasets import generate_synthetic, load_things_format, save_things_format
from .errors import DataFormatError, InvalidParameterError, NumericalError
from .evaluator import (
    model_similarities,
    render_heatmap,
    run_ablation_grid,
    summarize_results,
    table4_specs,
    top_k_accuracy,
    write_results_csv,
    write_similarity_csv,
    write_summary_csv,
)
from .foveation import radial_map
from .trainer import load_checkpoint, preset, save_checkpoint, train, write_history_csv

__all__ = ["main"]


def _out_dir(path_str: str) -> Path:
    """Resolve an output path, re-rooting relative paths under MB2L_OUT."""
    path = Path(path_str)
    root = os.environ.get("MB2L_OUT")
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _say(msg: str) -> None:
    print(msg)


# ---------------------------------------------------------------------------
# generate-data


def cmd_generate_data(args) -> int:
    train_set, test_set = generate_synthetic(
        n_train_concepts=args.train_concepts,
        n_test_concepts=args.test_concepts,
        n_channels=args.channels,
        T=args.time_samples,
        noise_sigma=args.noise,
        seed=args.seed,
        images_per_concept=args.images_per_concept,
        image_size=args.image_size,
        n_subjects=args.subjects,
    )
    out = _out_dir(args.out)
    save_things_format(out, train_set, test_set)
    _say(
        f"wrote {len(train_set)} train / {len(test_set)} test samples "
        f"({args.train_concepts} + {args.test_concepts} concepts, "
        f"{args.subjects} subject(s)) to {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    out = _out_dir(args.out or rc.out_dir or "run")
    train_set, test_set = load_things_format(rc.data_path, rc.channels)
    # the held-out concepts double as the validation set: the format has no
    # third split, and early stopping on them matches how the end-to-end
    # retrieval numbers are read
    result = train(train_set, test_set, rc.train, model_overrides=dict(rc.model_overrides))

    save_checkpoint(out / "checkpoint.npz", result.model, rc.train)
    write_history_csv(out / "history.csv", result.history)
    with open(out / "config.resolved.json", "w") as fh:
        json.dump(resolved_document(rc), fh, indent=2)
        fh.write("\n")
    _say(
        f"best val top-1 {result.state.best_val_metric:.4f} after "
        f"{len(result.history)} epoch(s)"
        + (" (early stop)" if result.stopped_early else "")
    )
    _say(f"checkpoint, history, and resolved config written to {out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _ranked_columns(row: np.ndarray) -> np.ndarray:
    # stable descending sort: score ties resolve to the lower column index
    return np.argsort(-row, kind="stable")


def _to_pil(img: np.ndarray):
    from PIL import Image

    return Image.fromarray((np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8))


def _contact_sheet(images, path) -> None:
    """Query image followed by the retrieved images, separated by a 2 px gap."""
    from PIL import Image

    tiles = [_to_pil(img) for img in images]
    h = max(t.height for t in tiles)
    w = sum(t.width for t in tiles) + 2 * (len(tiles) - 1)
    sheet = Image.new("RGB", (w, h), (255, 255, 255))
    x = 0
    for tile in tiles:
        sheet.paste(tile, (x, 0))
        x += tile.width + 2
    sheet.save(path)


def _load_compatible(data_dir, model, split: str):
    train_set, test_set = load_things_format(data_dir, wanted_channels=model.cfg.channel_names)
    samples = train_set if split == "train" else test_set
    if not samples:
        raise DataFormatError(f"{split} split of {data_dir} is empty")
    t = samples[0].epoch.data.shape[1]
    if t != model.cfg.n_samples:
        raise InvalidParameterError(
            f"checkpoint expects {model.cfg.n_samples} time samples, dataset has {t}"
        )
    return samples


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    samples = _load_compatible(args.data, model, args.split)
    out = _out_dir(args.out)
    sims = model_similarities(model, samples)
    if args.level == "all":
        wanted = [lv for lv in ("low", "high", "fused") if lv in sims]
    else:
        wanted = [args.level]
    missing = [lv for lv in wanted if lv not in sims]
    if missing:
        raise InvalidParameterError(
            f"checkpoint has no {missing[0]!r} level (available: {sorted(sims)})"
        )

    n = len(samples)
    k5 = min(5, n)
    rows = []
    for level in wanted:
        rows.append(
            {
                "level": level,
                "top1": top_k_accuracy(sims[level], 1),
                f"top{k5}": top_k_accuracy(sims[level], k5),
            }
        )
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["level", "top1", f"top{k5}"])
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        _say(f"{row['level']}: top-1 {row['top1']:.4f}  top-{k5} {row[f'top{k5}']:.4f}")

    # similarity exports and miss panels use the strongest requested level
    primary = "fused" if "fused" in wanted else wanted[0]
    sim = sims[primary]
    write_similarity_csv(sim, out / f"similarity_{primary}.csv")
    render_heatmap(sim, out / f"similarity_{primary}.png", scale=args.scale)

    miss_dir = out / "misses"
    n_miss = 0
    with open(out / "misses.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["row", "concept_id"]
            + [f"retrieved_{i}" for i in range(k5)]
            + [f"score_{i}" for i in range(k5)]
        )
        for i in range(n):
            order = _ranked_columns(sim.scores[i])
            if order[0] == i:
                continue
            n_miss += 1
            miss_dir.mkdir(exist_ok=True)
            top = order[:k5]
            writer.writerow(
                [i, sim.row_ids[i]]
                + [sim.col_ids[j] for j in top]
                + [f"{sim.scores[i, j]:.6g}" for j in top]
            )
            _contact_sheet(
                [samples[i].image] + [samples[j].image for j in top],
                miss_dir / f"miss_{i:03d}_concept_{sim.row_ids[i]}.png",
            )
    _say(f"{n_miss} top-1 miss(es); panels and CSVs written to {out}")
    return 0


# ---------------------------------------------------------------------------
# visualize


def cmd_visualize(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    out = _out_dir(args.out)

    if args.what == "blur":
        from PIL import Image

        prior = model.fovea_prior
        if prior is None:
            raise InvalidParameterError(
                "checkpoint was trained without the foveated image path"
            )
        s = model.cfg.image_size
        grid = prior.gate(radial_map(s, s).values).data
        Image.fromarray((grid * 255.0).round().astype(np.uint8), mode="L").save(
            out / "blur_gate.png"
        )
        if prior.kind == "free":
            # not a function of eccentricity; emit the per-pixel grid instead
            np.savetxt(out / "blur_grid.csv", grid, delimiter=",", fmt="%.8g")
            _say(f"free-prior gate grid ({s}x{s}) written to {out}")
            return 0
        radii = np.linspace(0.0, 1.0, args.radii)
        weights = prior.gate(radii).data
        with open(out / "blur_curve.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["r", "w"])
            for r, w in zip(radii, weights):
                writer.writerow([f"{r:.8g}", f"{w:.8g}"])
        _say(f"gate grid and w(r) curve ({args.radii} radii) written to {out}")
        return 0

    if args.what == "channels":
        if model.channel_prior is None:
            raise InvalidParameterError(
                "checkpoint was trained without the channel-prior pathway"
            )
        w_low = model.channel_prior.weights_low().data
        w_high = model.channel_prior.weights_high().data
        with open(out / "channels.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["channel", "w_low", "w_high"])
            for name, wl, wh in zip(model.cfg.channel_names, w_low, w_high):
                writer.writerow([name, f"{wl:.8g}", f"{wh:.8g}"])
        _say(f"channel weights for {len(w_low)} channels written to {out}")
        return 0

    # similarity
    if args.data is None:
        raise InvalidParameterError("visualize similarity requires --data")
    samples = _load_compatible(args.data, model, args.split)
    sims = model_similarities(model, samples)
    sim = sims.get("fused", sims["high"])
    write_similarity_csv(sim, out / f"similarity_{sim.level}.csv")
    render_heatmap(sim, out / f"similarity_{sim.level}.png", scale=args.scale)
    _say(f"similarity matrix ({sim.level}, {sim.n}x{sim.n}) written to {out}")
    return 0


# ---------------------------------------------------------------------------
# ablate


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise InvalidParameterError(f"--seeds must be comma-separated integers, got {text!r}") from None


def cmd_ablate(args) -> int:
    from dataclasses import replace

    model_overrides: dict = {}
    data_path = args.data
    base = preset(args.preset)
    if args.config is not None:
        rc = load_run_config(args.config)
        model_overrides = dict(rc.model_overrides)
        base = rc.train
        data_path = data_path or rc.data_path
    if data_path is None:
        raise InvalidParameterError("ablate needs --data or a config with data.path")
    if args.epochs is not None:
        base = replace(base, epochs=args.epochs)
    if args.batch_size is not None:
        base = replace(base, batch_size=args.batch_size)

    seeds = _parse_seeds(args.seeds)
    if not seeds:
        raise InvalidParameterError("--seeds must name at least one seed")
    train_set, test_set = load_things_format(data_path)
    specs = table4_specs(args.prior)

    rows = run_ablation_grid(
        specs, base, seeds, train_set, test_set, test_set,
        model_overrides=model_overrides, n_jobs=args.jobs,
    )
    out = _out_dir(args.out)
    write_results_csv(out / "results.csv", rows)
    summary = summarize_results(rows)
    write_summary_csv(out / "summary.csv", summary)

    by_spec = {
        (s["abvp_on"], s["bvfe_on"], s["mbcl_on"]): s["mean_top1"] for s in summary
    }
    full = by_spec[(True, True, True)]
    no_abvp = by_spec[(False, True, True)]
    _say(f"{len(rows)} runs over {len(specs)} specs x {len(seeds)} seeds written to {out}")
    _say(
        f"mean top-1: full {full:.4f} vs no-ABVP {no_abvp:.4f} "
        f"({'full >= no-ABVP' if full >= no_abvp else 'no-ABVP > full'})"
    )
    return 0


# ---------------------------------------------------------------------------
# parser / dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mb2l",
        description="EEG-image alignment: synthetic data, training, retrieval evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic dataset directory")
    p.add_argument("--out", default="dataset")
    p.add_argument("--train-concepts", type=int, default=64)
    p.add_argument("--test-concepts", type=int, default=16)
    p.add_argument("--channels", type=int, default=17)
    p.add_argument("--time-samples", type=int, default=64)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--images-per-concept", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--subjects", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train from a JSON run config")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="overrides output.dir from the config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="zero-shot retrieval metrics for a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--level", choices=["all", "low", "high", "fused"], default="all")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--scale", type=int, default=8, help="heatmap pixels per cell")
    p.add_argument("--out", default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the six-spec component grid")
    p.add_argument("--data", default=None)
    p.add_argument("--config", default=None, help="run config supplying model/train settings")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--preset", default="desk")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--prior", default="logistic")
    p.add_argument("--out", default="ablation")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("visualize", help="emit figure files from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("what", choices=["blur", "channels", "similarity"])
    p.add_argument("--data", default=None, help="dataset dir (similarity only)")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--radii", type=int, default=256)
    p.add_argument("--scale", type=int, default=8)
    p.add_argument("--out", default="figures")
    p.set_defaults(func=cmd_visualize)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidParameterError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
