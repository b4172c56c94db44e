"""Joint training of the gate, channel prior, encoders, heads, and
temperature under the two-level contrastive objective.

AdamW with decoupled weight decay on every trainable tensor (the frozen
high-level image encoder has none), global-norm gradient clipping, and
early stopping on held-out top-1 retrieval.
"""

from __future__ import annotations

import csv
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .alignment import normalize_rows
from .errors import InvalidParameterError, NumericalError
from .autodiff import Tensor
from .model import AlignmentModel, ModelConfig, build_model, config_for_samples

__all__ = [
    "TrainConfig",
    "TrainState",
    "TrainResult",
    "AdamW",
    "preset",
    "PRESETS",
    "early_stop_check",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "write_history_csv",
]

MODES = ("intra_subject", "inter_subject")
# default high-level loss weight per training mode
_MODE_ALPHA_HIGH = {"intra_subject": 0.5, "inter_subject": 0.1}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 60
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    early_stop_patience: int = 10
    seed: int = 0
    alpha_high: float | None = None  # None -> mode default
    mode: str = "intra_subject"
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.early_stop_patience < 1:
            raise InvalidParameterError("batch_size, epochs and patience must be >= 1")
        # learning_rate 0 is allowed so no-op runs stay expressible
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise InvalidParameterError("learning_rate and weight_decay must be >= 0")
        if self.grad_clip <= 0:
            raise InvalidParameterError("grad_clip must be positive")
        if self.mode not in MODES:
            raise InvalidParameterError(f"mode must be one of {MODES}")
        if self.alpha_high is not None and self.alpha_high < 0:
            raise InvalidParameterError("alpha_high must be >= 0")

    @property
    def resolved_alpha_high(self) -> float:
        if self.alpha_high is not None:
            return self.alpha_high
        return _MODE_ALPHA_HIGH[self.mode]


PRESETS: dict[str, TrainConfig] = {
    # laptop-scale default
    "desk": TrainConfig(batch_size=32, epochs=60, learning_rate=1e-4,
                        weight_decay=1e-4, early_stop_patience=10),
    # published configurations
    "paper-intra": TrainConfig(batch_size=256, epochs=60, learning_rate=1e-4,
                               weight_decay=1e-4, early_stop_patience=10,
                               mode="intra_subject"),
    "paper-inter": TrainConfig(batch_size=256, epochs=60, learning_rate=1e-4,
                               weight_decay=1e-4, early_stop_patience=10,
                               mode="inter_subject"),
}


def preset(name: str) -> TrainConfig:
    if name not in PRESETS:
        raise InvalidParameterError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
    return PRESETS[name]


@dataclass
class TrainState:
    step: int = 0
    best_val_metric: float = -np.inf
    epochs_since_improve: int = 0
    best_snapshot: dict | None = field(default=None, repr=False)


@dataclass
class TrainResult:
    model: AlignmentModel
    history: list[tuple[int, float, float]]  # (epoch, train_loss, val_top1)
    state: TrainState
    train_config: TrainConfig
    stopped_early: bool


def early_stop_check(state: TrainState, val_metric: float, patience: int) -> str:
    """'stop' once val_metric has gone `patience` epochs without a strict
    improvement; updates the state counters in place."""
    if patience < 1:
        raise InvalidParameterError("patience must be >= 1")
    if val_metric > state.best_val_metric:
        state.best_val_metric = float(val_metric)
        state.epochs_since_improve = 0
        return "continue"
    state.epochs_since_improve += 1
    return "stop" if state.epochs_since_improve >= patience else "continue"


class AdamW:
    """Adam with decoupled weight decay: the decay multiplies the weight
    directly (w <- w * (1 - lr*lambda)) before the moment update, so a
    zero-gradient step still shrinks the weight."""

    def __init__(self, params: dict[str, Tensor], lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr < 0 or weight_decay < 0:
            raise InvalidParameterError("lr and weight_decay must be >= 0")
        self.params = dict(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def clip_gradients(self, max_norm: float) -> float:
        """Global-norm clipping across every parameter; returns the norm."""
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(np.sum(np.asarray(p.grad, dtype=np.float64) ** 2))
        norm = float(np.sqrt(total))
        if norm > max_norm and norm > 0.0:
            scale = max_norm / norm
            for p in self.params.values():
                if p.grad is not None:
                    p.grad = p.grad * scale
        return norm

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                p.data = p.data * (1.0 - self.lr * self.weight_decay)
            m = self._m[name] = b1 * self._m[name] + (1.0 - b1) * g
            v = self._v[name] = b2 * self._v[name] + (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**self.t)
            v_hat = v / (1.0 - b2**self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# training loop


def _fused_top1(model: AlignmentModel, samples) -> float:
    """Alpha-weighted retrieval top-1 on a sample list (diagonal = match)."""
    embs = model.eval_embeddings(samples)
    weights = {"low": model.contrastive.alpha_low, "high": model.contrastive.alpha_high}
    fused = None
    for level, (ze, zi) in embs.items():
        sims = normalize_rows(ze) @ normalize_rows(zi).T
        w = weights[level] if len(embs) > 1 else 1.0
        fused = w * sims if fused is None else fused + w * sims
    hits = np.argmax(fused, axis=1) == np.arange(fused.shape[0])
    return float(hits.mean())


def _batch_diagnostics(eeg: np.ndarray, prep: dict, loss_value: float) -> str:
    return (
        f"loss={loss_value!r}; eeg mean={float(eeg.mean()):.4g} "
        f"std={float(eeg.std()):.4g} min={float(eeg.min()):.4g} "
        f"max={float(eeg.max()):.4g}; image mean={float(prep['original'].mean()):.4g}; "
        f"batch={eeg.shape[0]}"
    )


def train(
    train_set,
    val_set,
    cfg: TrainConfig,
    model: AlignmentModel | None = None,
    model_overrides: dict | None = None,
) -> TrainResult:
    """Optimize on train_set, early-stopping on val_set top-1 retrieval.

    Returns the best-validation snapshot loaded back into the model.  The
    degraded copies and frozen features of every image are precomputed once
    up front; only gate/encoder/head work repeats per step.
    """
    if not train_set or not val_set:
        raise InvalidParameterError("train_set and val_set must be non-empty")
    if model is None:
        overrides = dict(model_overrides or {})
        overrides.setdefault("seed", cfg.seed)
        overrides.setdefault("alpha_high", cfg.resolved_alpha_high)
        model = build_model(config_for_samples(train_set, **overrides))

    prep_all = model.prepare_images([s.image for s in train_set])
    eeg_all = np.stack([np.asarray(s.epoch.data) for s in train_set])
    n = len(train_set)
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    state = TrainState()
    history: list[tuple[int, float, float]] = []
    stopped_early = False

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            prep = {k: v[idx] for k, v in prep_all.items()}
            eeg = eeg_all[idx]
            opt.zero_grad()
            try:
                loss = model.loss(prep, eeg)
                value = float(loss.data)
            except NumericalError as exc:
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch} step {state.step} "
                    f"({exc}): " + _batch_diagnostics(eeg, prep, float("nan"))
                ) from exc
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch} step {state.step}: "
                    + _batch_diagnostics(eeg, prep, value)
                )
            loss.backward()
            opt.clip_gradients(cfg.grad_clip)
            opt.step()
            state.step += 1
            losses.append(value)
        train_loss = float(np.mean(losses))
        val_top1 = _fused_top1(model, val_set)
        history.append((epoch, train_loss, val_top1))
        improved = val_top1 > state.best_val_metric
        verdict = early_stop_check(state, val_top1, cfg.early_stop_patience)
        if improved:
            state.best_snapshot = model.state_dict()
        if verdict == "stop":
            stopped_early = True
            break

    if state.best_snapshot is not None:
        model.load_state_dict(state.best_snapshot)
    return TrainResult(model=model, history=history, state=state,
                       train_config=cfg, stopped_early=stopped_early)


# ---------------------------------------------------------------------------
# persistence


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_top1"])
        for epoch, train_loss, val_top1 in history:
            writer.writerow([epoch, f"{train_loss:.8g}", f"{val_top1:.8g}"])


def save_checkpoint(path, model: AlignmentModel, cfg: TrainConfig) -> None:
    """Single self-describing archive: parameters + both configs + seed."""
    payload = {f"param.{k}": v for k, v in model.state_dict().items()}
    payload["model_config.json"] = np.asarray(json.dumps(asdict(model.cfg)))
    payload["train_config.json"] = np.asarray(json.dumps(asdict(cfg)))
    payload["seed"] = np.asarray(cfg.seed)
    with open(path, "wb") as fh:  # keep the exact path (savez appends .npz)
        np.savez(fh, **payload)


def load_checkpoint(path) -> tuple[AlignmentModel, TrainConfig]:
    path = Path(path)
    if not path.exists():
        raise InvalidParameterError(f"checkpoint {path} does not exist")
    try:
        archive_handle = np.load(path, allow_pickle=False)
    except (ValueError, OSError, zipfile.BadZipFile) as exc:
        raise InvalidParameterError(f"{path} is not a readable checkpoint: {exc}") from exc
    with archive_handle as archive:
        try:
            model_cfg = json.loads(archive["model_config.json"].item())
            train_cfg = json.loads(archive["train_config.json"].item())
        except KeyError as exc:
            raise InvalidParameterError(f"{path} is not a checkpoint archive: {exc}") from exc
        state = {
            key[len("param."):]: archive[key]
            for key in archive.files
            if key.startswith("param.")
        }
    model = build_model(ModelConfig(**{**model_cfg, "channel_names": tuple(model_cfg["channel_names"])}))
    model.load_state_dict(state)
    return model, TrainConfig(**train_cfg)
