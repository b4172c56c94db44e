"""Synthetic paired EEG-image data and the float16 on-disk format.

The generator plants real cross-modal structure so end-to-end retrieval is
learnable: every epoch is a linear readout of the shown image — a coarse
4x4 luminance map routed onto occipital channels (low-level content) and a
shape/color category code routed onto parietal channels (high-level
content) — mirroring the channel-prior geography, plus Gaussian trial noise.
Concept identity is (shape kind, fill color, base position), so held-out
concepts are still decodable from the planted readout.

On disk (one directory per subject):

    data/subject_<id>/{train,test}.f16   raw little-endian float16, (N, C, T)
    data/subject_<id>/{train,test}.meta  JSON sidecar: shape, channels,
                                         sampling_rate, per-row records
    images/<concept_id>/<image_idx>.png

Rows sharing (concept_id, image_idx) are repetition trials; the loader
averages them and promotes to float32.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .eeg import EEGEpoch, HIGH_LEVEL_CHANNELS, LOW_LEVEL_CHANNELS
from .errors import DataFormatError, InvalidParameterError

__all__ = [
    "THINGS_CHANNELS_17",
    "ConceptSpec",
    "PairedSample",
    "SplitSpec",
    "montage_names",
    "generate_synthetic",
    "average_repetitions",
    "select_channels",
    "save_things_format",
    "load_things_format",
]

# posterior 17-channel montage used by the desk-scale pipeline
THINGS_CHANNELS_17 = (
    "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8",
    "PO7", "PO3", "POz", "PO4", "PO8", "O1", "Oz", "O2",
)

_EXTRA_CHANNELS = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC5", "FC1", "FC2", "FC6",
    "T7", "C3", "Cz", "C4", "T8", "CP5", "CP1", "CPz", "CP2", "CP6",
    "AF3", "AF4", "F1", "F2", "F5", "F6", "FC3", "FC4", "C1", "C2", "C5",
    "C6", "CP3", "CP4", "P9", "P10", "PO9", "PO10", "O9", "O10", "Iz",
    "TP9", "TP10", "FT9", "FT10",
)

SHAPE_KINDS = ("disk", "square", "cross", "triangle")


def montage_names(n_channels: int) -> tuple[str, ...]:
    """First 17 names follow the posterior montage; extras fill in after."""
    if n_channels < 1:
        raise InvalidParameterError("need at least one channel")
    pool = THINGS_CHANNELS_17 + _EXTRA_CHANNELS
    if n_channels <= len(pool):
        return pool[:n_channels]
    return pool + tuple(f"EXT{i}" for i in range(n_channels - len(pool)))


@dataclass(frozen=True)
class ConceptSpec:
    concept_id: int
    image_params: dict
    eeg_template: np.ndarray = field(repr=False)  # high-level component only


@dataclass(frozen=True)
class PairedSample:
    image: np.ndarray = field(repr=False)
    epoch: EEGEpoch = field(repr=False)
    concept_id: int = 0
    subject_id: int = 0
    image_idx: int = 0


@dataclass(frozen=True)
class SplitSpec:
    train_concepts: frozenset
    test_concepts: frozenset
    trials_per_image: int
    images_per_concept: int

    def __post_init__(self):
        if self.train_concepts & self.test_concepts:
            raise InvalidParameterError(
                f"train/test concepts overlap: {sorted(self.train_concepts & self.test_concepts)}"
            )


# ---------------------------------------------------------------------------
# image rendering


def _render_shape(size: int, kind: str, color, center, half: float) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    cy, cx = center
    dy, dx = yy - cy, xx - cx
    if kind == "disk":
        mask = dy**2 + dx**2 <= half**2
    elif kind == "square":
        mask = np.maximum(np.abs(dy), np.abs(dx)) <= half
    elif kind == "cross":
        arm = half / 3.0
        mask = ((np.abs(dx) <= arm) & (np.abs(dy) <= half)) | (
            (np.abs(dy) <= arm) & (np.abs(dx) <= half)
        )
    elif kind == "triangle":
        # upward triangle: width grows linearly from apex
        rel = (dy + half) / 2.0
        mask = (dy >= -half) & (dy <= half) & (np.abs(dx) <= rel)
    else:
        raise InvalidParameterError(f"unknown shape kind {kind!r}")
    img = np.full((size, size, 3), 0.05)
    img[mask] = color
    # snap to the 8-bit grid so PNG round-trips are exact
    return (np.round(img * 255.0) / 255.0).astype(np.float32)


def _low_level_features(img: np.ndarray) -> np.ndarray:
    """4x4 block-mean luminance, centered and scaled: 16 values."""
    lum = img.mean(axis=2)
    size = lum.shape[0]
    block = size // 4
    coarse = lum[: 4 * block, : 4 * block].reshape(4, block, 4, block).mean(axis=(1, 3))
    return ((coarse - 0.5) * 2.0).reshape(-1)


def _high_level_features(kind: str, color) -> np.ndarray:
    one_hot = np.zeros(len(SHAPE_KINDS))
    one_hot[SHAPE_KINDS.index(kind)] = 1.0
    return np.concatenate([one_hot, (np.asarray(color) - 0.5) * 2.0])


def _smooth_bases(rng, n: int, t: int) -> np.ndarray:
    """n random smooth unit-RMS temporal courses of length t."""
    time = np.arange(t) / max(t, 1)
    out = np.zeros((n, t))
    for i in range(n):
        for _ in range(3):
            f = rng.uniform(1.0, 8.0)
            out[i] += rng.normal() * np.sin(2.0 * np.pi * f * time + rng.uniform(0, 2 * np.pi))
        out[i] /= np.sqrt(np.mean(out[i] ** 2)) + 1e-12
    return out


def _group_pattern(rng, names, group, n_feats: int) -> np.ndarray:
    """Random spatial patterns supported on a channel group (or everywhere
    if the montage misses the group entirely)."""
    idx = [i for i, nm in enumerate(names) if nm in group]
    if not idx:
        idx = list(range(len(names)))
    out = np.zeros((n_feats, len(names)))
    out[:, idx] = rng.standard_normal((n_feats, len(idx)))
    return out


def generate_synthetic(
    n_train_concepts: int,
    n_test_concepts: int,
    n_channels: int = 17,
    T: int = 64,
    noise_sigma: float = 0.5,
    seed: int = 0,
    images_per_concept: int = 4,
    test_images_per_concept: int = 1,
    trials_per_image: int = 4,
    test_trials_per_image: int = 16,
    image_size: int = 64,
    sampling_rate: float = 250.0,
    n_subjects: int = 1,
    subject_mix: float = 0.3,
) -> tuple[list[PairedSample], list[PairedSample]]:
    """Deterministic synthetic paired dataset; train/test concepts disjoint
    by construction.  Returned epochs are repetition-averaged float32."""
    if n_train_concepts < 1 or n_test_concepts < 1:
        raise InvalidParameterError("need at least one concept per split")
    if min(images_per_concept, test_images_per_concept, trials_per_image,
           test_trials_per_image, n_subjects) < 1:
        raise InvalidParameterError("counts must be >= 1")
    if T < 4 or image_size < 8:
        raise InvalidParameterError("T must be >= 4 and image_size >= 8")
    if noise_sigma < 0:
        raise InvalidParameterError("noise_sigma must be >= 0")

    names = montage_names(n_channels)
    root = np.random.default_rng(seed)
    n_low = 16
    n_high = len(SHAPE_KINDS) + 3
    spatial_low = _group_pattern(root, names, LOW_LEVEL_CHANNELS, n_low)
    spatial_high = _group_pattern(root, names, HIGH_LEVEL_CHANNELS, n_high)
    temporal_low = _smooth_bases(root, n_low, T)
    temporal_high = _smooth_bases(root, n_high, T)

    mixers = [np.eye(n_channels)]
    for _ in range(1, n_subjects):
        r = root.standard_normal((n_channels, n_channels)) / np.sqrt(n_channels)
        mixers.append((1.0 - subject_mix) * np.eye(n_channels) + subject_mix * r)

    def concept_params(concept_id: int, crng) -> dict:
        return {
            "kind": SHAPE_KINDS[concept_id % len(SHAPE_KINDS)],
            "color": tuple(crng.uniform(0.3, 1.0, size=3)),
            "offset": tuple(crng.uniform(-0.12, 0.12, size=2)),
            "scale": float(crng.uniform(0.22, 0.38)),
        }

    def render(params: dict, jitter_rng=None) -> np.ndarray:
        oy, ox = params["offset"]
        scale = params["scale"]
        if jitter_rng is not None:
            oy += jitter_rng.uniform(-0.04, 0.04)
            ox += jitter_rng.uniform(-0.04, 0.04)
            scale *= jitter_rng.uniform(0.9, 1.1)
        center = ((0.5 + oy) * image_size, (0.5 + ox) * image_size)
        return _render_shape(image_size, params["kind"], params["color"], center, scale * image_size)

    def template_for(img: np.ndarray, params: dict) -> np.ndarray:
        phi_low = _low_level_features(img)
        phi_high = _high_level_features(params["kind"], params["color"])
        t = np.einsum("k,kc,kt->ct", phi_low, spatial_low, temporal_low)
        t = t + np.einsum("k,kc,kt->ct", phi_high, spatial_high, temporal_high)
        rms = np.sqrt(np.mean(t**2))
        return t / (rms + 1e-9)

    def build_split(concept_ids, n_images, n_trials, split_tag: str) -> list[PairedSample]:
        samples = []
        for concept_id in concept_ids:
            crng = np.random.default_rng(
                np.random.SeedSequence([seed, 1 if split_tag == "test" else 0, concept_id])
            )
            params = concept_params(concept_id, crng)
            for image_idx in range(n_images):
                img = render(params, jitter_rng=crng if image_idx > 0 else None)
                base = template_for(img, params)
                for subject_id in range(n_subjects):
                    mixed = mixers[subject_id] @ base
                    trials = mixed[None, :, :] + noise_sigma * crng.standard_normal(
                        (n_trials,) + mixed.shape
                    )
                    avg = trials.mean(axis=0).astype(np.float32)
                    samples.append(
                        PairedSample(
                            image=img,
                            epoch=EEGEpoch(avg, names, sampling_rate),
                            concept_id=concept_id,
                            subject_id=subject_id,
                            image_idx=image_idx,
                        )
                    )
        return samples

    train_ids = list(range(n_train_concepts))
    test_ids = list(range(n_train_concepts, n_train_concepts + n_test_concepts))
    train = build_split(train_ids, images_per_concept, trials_per_image, "train")
    test = build_split(test_ids, test_images_per_concept, test_trials_per_image, "test")
    SplitSpec(frozenset(train_ids), frozenset(test_ids), trials_per_image, images_per_concept)
    return train, test


# ---------------------------------------------------------------------------
# repetition averaging and channel selection


def average_repetitions(trials: list[EEGEpoch]) -> EEGEpoch:
    """Samplewise arithmetic mean across repetition trials."""
    if not trials:
        raise InvalidParameterError("cannot average an empty trial list")
    first = trials[0]
    for t in trials[1:]:
        if t.data.shape != first.data.shape:
            raise InvalidParameterError(
                f"trial shape {t.data.shape} differs from {first.data.shape}"
            )
        if t.channel_names != first.channel_names:
            raise InvalidParameterError("trial channel lists differ")
    stack = np.stack([t.data for t in trials])
    return EEGEpoch(stack.mean(axis=0), first.channel_names, first.sampling_rate)


def select_channels(epoch: EEGEpoch, wanted) -> EEGEpoch:
    """Subset/reorder rows to exactly the wanted channel order."""
    wanted = list(wanted)
    index = {name: i for i, name in enumerate(epoch.channel_names)}
    missing = [w for w in wanted if w not in index]
    if missing:
        raise InvalidParameterError(f"epoch is missing channels: {missing}")
    rows = [index[w] for w in wanted]
    return EEGEpoch(epoch.data[rows], wanted, epoch.sampling_rate)


# ---------------------------------------------------------------------------
# on-disk format


def save_things_format(root, train: list[PairedSample], test: list[PairedSample]) -> None:
    """Write samples in the float16 + sidecar layout described above.

    Each provided sample is stored as one row; repetition structure, if any,
    is expressed by repeated (concept_id, image_idx) records.
    """
    root = Path(root)
    images_dir = root / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    written_images: set[tuple[int, int]] = set()

    def write_image(sample: PairedSample) -> str:
        key = (sample.concept_id, sample.image_idx)
        rel = f"images/{sample.concept_id}/{sample.image_idx}.png"
        if key not in written_images:
            path = root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            arr = np.clip(np.round(np.asarray(sample.image) * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(arr).save(path)
            written_images.add(key)
        return rel

    by_subject: dict[int, dict[str, list[PairedSample]]] = {}
    for tag, samples in (("train", train), ("test", test)):
        for s in samples:
            by_subject.setdefault(s.subject_id, {"train": [], "test": []})[tag].append(s)

    for subject_id, splits in sorted(by_subject.items()):
        sdir = root / "data" / f"subject_{subject_id:02d}"
        sdir.mkdir(parents=True, exist_ok=True)
        for tag in ("train", "test"):
            samples = splits[tag]
            if not samples:
                continue
            arr = np.stack([s.epoch.data for s in samples]).astype("<f2")
            (sdir / f"{tag}.f16").write_bytes(arr.tobytes())
            meta = {
                "shape": list(arr.shape),
                "channels": list(samples[0].epoch.channel_names),
                "sampling_rate": samples[0].epoch.sampling_rate,
                "records": [
                    {
                        "concept_id": s.concept_id,
                        "image_idx": s.image_idx,
                        "image_file": write_image(s),
                    }
                    for s in samples
                ],
            }
            (sdir / f"{tag}.meta").write_text(json.dumps(meta, indent=1))


def _load_split(root: Path, sdir: Path, tag: str, subject_id: int, wanted) -> list[PairedSample]:
    meta_path = sdir / f"{tag}.meta"
    data_path = sdir / f"{tag}.f16"
    if not meta_path.exists() or not data_path.exists():
        raise DataFormatError(f"missing {tag}.f16/.meta under {sdir}")
    try:
        meta = json.loads(meta_path.read_text())
        shape = tuple(int(x) for x in meta["shape"])
        channels = [str(c) for c in meta["channels"]]
        rate = float(meta["sampling_rate"])
        records = meta["records"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed metadata {meta_path}: {exc}") from exc
    if len(shape) != 3 or shape[1] != len(channels):
        raise DataFormatError(
            f"{meta_path}: shape {shape} disagrees with {len(channels)} channel names"
        )
    if len(records) != shape[0]:
        raise DataFormatError(f"{meta_path}: {len(records)} records for {shape[0]} rows")
    raw = np.frombuffer(data_path.read_bytes(), dtype="<f2")
    if raw.size != int(np.prod(shape)):
        raise DataFormatError(
            f"{data_path}: holds {raw.size} values, metadata promises {np.prod(shape)}"
        )
    arr = raw.reshape(shape).astype(np.float32)

    groups: dict[tuple[int, int], dict] = {}
    for row, rec in zip(arr, records):
        try:
            key = (int(rec["concept_id"]), int(rec["image_idx"]))
            image_file = str(rec["image_file"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"malformed record in {meta_path}: {exc}") from exc
        entry = groups.setdefault(key, {"rows": [], "image_file": image_file})
        entry["rows"].append(row)

    samples = []
    for (concept_id, image_idx), entry in sorted(groups.items()):
        trials = [EEGEpoch(r, channels, rate) for r in entry["rows"]]
        epoch = average_repetitions(trials)
        epoch = select_channels(epoch, wanted if wanted is not None else channels)
        img_path = root / entry["image_file"]
        if not img_path.exists():
            raise DataFormatError(f"referenced image missing: {img_path}")
        img = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float32) / 255.0
        samples.append(
            PairedSample(
                image=img,
                epoch=epoch,
                concept_id=concept_id,
                subject_id=subject_id,
                image_idx=image_idx,
            )
        )
    return samples


def load_things_format(dir_path, wanted_channels=None) -> tuple[list[PairedSample], list[PairedSample]]:
    """Load every subject under <dir>/data, averaging repetition rows and
    promoting float16 to float32.  Train/test concept disjointness is
    asserted unconditionally.

    With real THINGS-style exports this yields the published per-subject
    sample counts; on synthetic data the counts follow the generator config.
    """
    root = Path(dir_path)
    data_dir = root / "data"
    if not data_dir.is_dir():
        raise DataFormatError(f"no data/ directory under {root}")
    train: list[PairedSample] = []
    test: list[PairedSample] = []
    for sdir in sorted(data_dir.iterdir()):
        if not sdir.is_dir():
            continue
        try:
            subject_id = int(sdir.name.split("_")[-1])
        except ValueError as exc:
            raise DataFormatError(f"cannot parse subject id from {sdir.name!r}") from exc
        train.extend(_load_split(root, sdir, "train", subject_id, wanted_channels))
        test.extend(_load_split(root, sdir, "test", subject_id, wanted_channels))
    train_ids = {s.concept_id for s in train}
    test_ids = {s.concept_id for s in test}
    if train_ids & test_ids:
        raise DataFormatError(
            f"zero-shot violation: concepts in both splits: {sorted(train_ids & test_ids)}"
        )
    return train, test
