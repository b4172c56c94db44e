"""Zero-shot retrieval metrics, similarity matrices, and the ablation grid.

Retrieval treats row i of the EEG embeddings and row i of the image
embeddings as the matched pair; scores are plain cosine similarities.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .alignment import normalize_rows
from .errors import InvalidParameterError
from .foveation import DEGRADATION_KINDS, PRIOR_KINDS
from .model import AlignmentModel
from .trainer import TrainConfig, train

__all__ = [
    "SimilarityMatrix",
    "similarity_matrix",
    "top_k_accuracy",
    "fuse_levels",
    "AblationSpec",
    "table4_specs",
    "retrieval_metrics",
    "model_similarities",
    "run_ablation_grid",
    "summarize_results",
    "write_results_csv",
    "write_summary_csv",
    "write_similarity_csv",
    "render_heatmap",
    "RESULT_FIELDS",
    "SUMMARY_FIELDS",
]

LEVELS = ("low", "high", "fused")


@dataclass(frozen=True)
class SimilarityMatrix:
    scores: np.ndarray = field(repr=False)
    row_ids: tuple
    col_ids: tuple
    level: str = "fused"

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise InvalidParameterError(f"scores must be square, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidParameterError("similarity scores must be finite")
        rows, cols = tuple(self.row_ids), tuple(self.col_ids)
        if len(rows) != arr.shape[0] or len(cols) != arr.shape[1]:
            raise InvalidParameterError("id lists must match the score grid")
        if self.level not in LEVELS:
            raise InvalidParameterError(f"level must be one of {LEVELS}")
        object.__setattr__(self, "scores", arr)
        object.__setattr__(self, "row_ids", rows)
        object.__setattr__(self, "col_ids", cols)

    @property
    def n(self) -> int:
        return self.scores.shape[0]


def similarity_matrix(eeg_embs, img_embs, ids=None, level: str = "fused") -> SimilarityMatrix:
    """Pairwise cosine similarities; row i / column i are the matched pair."""
    eeg = np.asarray(eeg_embs, dtype=np.float64)
    img = np.asarray(img_embs, dtype=np.float64)
    if eeg.ndim != 2 or img.ndim != 2:
        raise InvalidParameterError("embeddings must be (N, d)")
    if eeg.shape != img.shape:
        raise InvalidParameterError(
            f"embedding shapes differ: eeg {eeg.shape} vs img {img.shape}"
        )
    scores = normalize_rows(eeg) @ normalize_rows(img).T
    ids = tuple(range(eeg.shape[0])) if ids is None else tuple(ids)
    return SimilarityMatrix(scores=scores, row_ids=ids, col_ids=ids, level=level)


def top_k_accuracy(sim: SimilarityMatrix, k: int) -> float:
    """Fraction of rows whose diagonal ranks in the row's top k.

    Ties rank by lower column index, so an equal score left of the diagonal
    beats it and one right of it does not.
    """
    n = sim.n
    if not 1 <= k <= n:
        raise InvalidParameterError(f"k must be in [1, {n}], got {k}")
    scores = sim.scores
    hits = 0
    for i in range(n):
        row = scores[i]
        diag = row[i]
        rank = int(np.sum(row > diag) + np.sum(row[:i] == diag))
        hits += rank < k
    return hits / n


def fuse_levels(
    sim_low: SimilarityMatrix,
    sim_high: SimilarityMatrix,
    alpha_low: float = 1.0,
    alpha_high: float = 0.5,
) -> SimilarityMatrix:
    """Alpha-weighted sum of the two level matrices."""
    if sim_low.scores.shape != sim_high.scores.shape:
        raise InvalidParameterError("level matrices differ in shape")
    if sim_low.row_ids != sim_high.row_ids or sim_low.col_ids != sim_high.col_ids:
        raise InvalidParameterError("level matrices differ in ids")
    if alpha_low < 0 or alpha_high < 0:
        raise InvalidParameterError("alphas must be >= 0")
    fused = alpha_low * sim_low.scores + alpha_high * sim_high.scores
    return SimilarityMatrix(fused, sim_low.row_ids, sim_low.col_ids, level="fused")


# ---------------------------------------------------------------------------
# model-level evaluation


def model_similarities(model: AlignmentModel, samples) -> dict[str, SimilarityMatrix]:
    """Per-level similarity matrices for a sample list, plus the fused one
    (alpha-weighted with the model's training weights) when both levels
    exist."""
    embs = model.eval_embeddings(samples)
    ids = tuple(s.concept_id for s in samples)
    sims = {
        level: similarity_matrix(ze, zi, ids=ids, level=level)
        for level, (ze, zi) in embs.items()
    }
    if "low" in sims and "high" in sims:
        sims["fused"] = fuse_levels(
            sims["low"], sims["high"],
            alpha_low=model.contrastive.alpha_low,
            alpha_high=model.contrastive.alpha_high,
        )
    return sims


def retrieval_metrics(model: AlignmentModel, samples, ks=(1, 5)) -> dict[str, dict[str, float]]:
    """{level: {"top1": ..., "top5": ...}} on the given samples."""
    sims = model_similarities(model, samples)
    return {
        level: {f"top{k}": top_k_accuracy(sim, k) for k in ks}
        for level, sim in sims.items()
    }


# ---------------------------------------------------------------------------
# ablation grid


@dataclass(frozen=True)
class AblationSpec:
    abvp_on: bool = True
    bvfe_on: bool = True
    mbcl_on: bool = True
    degradation: str = "blur"
    prior: str = "logistic"

    def __post_init__(self):
        if self.abvp_on and not self.mbcl_on:
            raise InvalidParameterError("abvp_on requires mbcl_on")
        if self.degradation not in DEGRADATION_KINDS:
            raise InvalidParameterError(f"degradation must be one of {DEGRADATION_KINDS}")
        if self.prior not in PRIOR_KINDS:
            raise InvalidParameterError(f"prior must be one of {PRIOR_KINDS}")


def table4_specs(prior: str = "logistic") -> list[AblationSpec]:
    """The six valid on/off combinations of the three components.

    Rows without the foveated pathway get the identity image path
    (degradation "none").
    """
    return [
        AblationSpec(True, True, True, "blur", prior),
        AblationSpec(False, True, True, "none", prior),
        AblationSpec(True, False, True, "blur", prior),
        AblationSpec(False, False, True, "none", prior),
        AblationSpec(False, True, False, "none", prior),
        AblationSpec(False, False, False, "none", prior),
    ]


RESULT_FIELDS = (
    "abvp_on", "bvfe_on", "mbcl_on", "degradation", "prior",
    "seed", "top1", "top5", "wall_seconds",
)
SUMMARY_FIELDS = (
    "abvp_on", "bvfe_on", "mbcl_on", "degradation", "prior",
    "mean_top1", "std_top1", "mean_top5", "std_top5", "n_seeds",
)


def _run_one(args) -> dict:
    spec, seed, base_cfg, train_set, val_set, test_set, overrides = args
    t0 = time.perf_counter()
    model_overrides = dict(overrides or {})
    model_overrides.update(
        abvp_on=spec.abvp_on, bvfe_on=spec.bvfe_on, mbcl_on=spec.mbcl_on,
        degradation=spec.degradation, prior=spec.prior, seed=seed,
    )
    cfg = replace(base_cfg, seed=seed)
    result = train(train_set, val_set, cfg, model_overrides=model_overrides)
    metrics = retrieval_metrics(result.model, test_set, ks=(1, 5))
    best = metrics.get("fused", metrics["high"])
    return {
        "abvp_on": spec.abvp_on,
        "bvfe_on": spec.bvfe_on,
        "mbcl_on": spec.mbcl_on,
        "degradation": spec.degradation,
        "prior": spec.prior,
        "seed": seed,
        "top1": best["top1"],
        "top5": best["top5"],
        "wall_seconds": time.perf_counter() - t0,
    }


def run_ablation_grid(
    specs,
    base_cfg: TrainConfig,
    seeds,
    train_set,
    val_set,
    test_set,
    model_overrides: dict | None = None,
    n_jobs: int = 1,
) -> list[dict]:
    """Train and evaluate every (spec, seed) pair; one result row each.

    Runs are seed-isolated and independent, so ``n_jobs > 1`` fans them out
    over worker processes.  An empty spec list yields an empty table.
    """
    specs = list(specs)
    seeds = list(seeds)
    if n_jobs < 1:
        raise InvalidParameterError("n_jobs must be >= 1")
    jobs = [
        (spec, seed, base_cfg, train_set, val_set, test_set, model_overrides)
        for spec in specs
        for seed in seeds
    ]
    if not jobs:
        return []
    if n_jobs == 1:
        return [_run_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_run_one, jobs))


def summarize_results(rows) -> list[dict]:
    """Mean/stddev of top-1/top-5 per spec across seeds (population std)."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = tuple(row[f] for f in ("abvp_on", "bvfe_on", "mbcl_on", "degradation", "prior"))
        groups.setdefault(key, []).append(row)
    out = []
    for key, members in groups.items():
        top1 = np.array([m["top1"] for m in members], dtype=np.float64)
        top5 = np.array([m["top5"] for m in members], dtype=np.float64)
        out.append(
            {
                "abvp_on": key[0], "bvfe_on": key[1], "mbcl_on": key[2],
                "degradation": key[3], "prior": key[4],
                "mean_top1": float(top1.mean()), "std_top1": float(top1.std()),
                "mean_top5": float(top5.mean()), "std_top5": float(top5.std()),
                "n_seeds": len(members),
            }
        )
    return out


def _write_rows(path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_results_csv(path, rows) -> None:
    _write_rows(path, RESULT_FIELDS, rows)


def write_summary_csv(path, rows) -> None:
    _write_rows(path, SUMMARY_FIELDS, rows)


# ---------------------------------------------------------------------------
# similarity exports


def write_similarity_csv(sim: SimilarityMatrix, path) -> None:
    """Grid as CSV: first column row ids, header holds column ids."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [str(c) for c in sim.col_ids])
        for rid, row in zip(sim.row_ids, sim.scores):
            writer.writerow([str(rid)] + [f"{v:.8g}" for v in row])


def render_heatmap(sim: SimilarityMatrix, path, scale: int = 8) -> None:
    """Viridis-mapped PNG, (N*scale) x (N*scale) pixels, nearest-neighbour
    blocks so every cell is readable at small N."""
    from matplotlib import colormaps
    from PIL import Image

    if scale < 1:
        raise InvalidParameterError("scale must be >= 1")
    scores = sim.scores
    lo, hi = float(scores.min()), float(scores.max())
    norm = np.zeros_like(scores) if hi == lo else (scores - lo) / (hi - lo)
    rgba = colormaps["viridis"](norm)
    rgb = (rgba[:, :, :3] * 255.0).round().astype(np.uint8)
    img = Image.fromarray(rgb).resize((sim.n * scale, sim.n * scale), Image.NEAREST)
    img.save(Path(path))
