import numpy as np
import pytest

from mb2l import autodiff as ad
from mb2l.datasets import generate_synthetic
from mb2l.errors import InvalidParameterError, NumericalError
from mb2l.model import build_model, config_for_samples
from mb2l.trainer import (
    PRESETS,
    AdamW,
    TrainConfig,
    TrainState,
    early_stop_check,
    load_checkpoint,
    preset,
    save_checkpoint,
    train,
    write_history_csv,
    _fused_top1,
)

TINY_MODEL = dict(
    token_dim=8, embed_dim=8, eeg_width=4, image_depth=2, image_width=4,
    frozen_depth=1, frozen_width=4, frozen_out_dim=8,
)


def make_sets(n_train=6, n_val=3, seed=0):
    return generate_synthetic(
        n_train_concepts=n_train, n_test_concepts=n_val, n_channels=5,
        T=16, image_size=16, images_per_concept=1, seed=seed,
    )


def tiny_model(samples, seed=1, **overrides):
    return build_model(config_for_samples(samples, seed=seed, **TINY_MODEL, **overrides))


class TestTrainConfig:
    @pytest.mark.parametrize(
        "bad",
        [
            dict(batch_size=0),
            dict(epochs=0),
            dict(early_stop_patience=0),
            dict(learning_rate=-1e-4),
            dict(weight_decay=-0.1),
            dict(grad_clip=0.0),
            dict(mode="cross_subject"),
            dict(alpha_high=-0.5),
        ],
    )
    def test_invalid(self, bad):
        with pytest.raises(InvalidParameterError):
            TrainConfig(**bad)

    def test_mode_sets_default_alpha_high(self):
        assert TrainConfig(mode="intra_subject").resolved_alpha_high == 0.5
        assert TrainConfig(mode="inter_subject").resolved_alpha_high == 0.1
        assert TrainConfig(mode="inter_subject", alpha_high=0.3).resolved_alpha_high == 0.3

    def test_presets(self):
        desk = preset("desk")
        assert desk.batch_size == 32 and desk.early_stop_patience == 10
        intra = preset("paper-intra")
        assert intra.batch_size == 256
        assert intra.learning_rate == 1e-4 and intra.weight_decay == 1e-4
        assert intra.epochs == 60
        assert intra.resolved_alpha_high == 0.5
        assert preset("paper-inter").resolved_alpha_high == 0.1
        with pytest.raises(InvalidParameterError):
            preset("gpu")
        assert set(PRESETS) == {"desk", "paper-intra", "paper-inter"}


class TestAdamW:
    def test_single_step_oracle(self):
        w = ad.parameter(np.array(2.0))
        opt = AdamW({"w": w}, lr=0.1, weight_decay=0.0)
        w.grad = np.array(1.0)
        opt.step()
        # m=0.1, v=0.001; bias correction makes both hats exactly 1
        expected = 2.0 - 0.1 * (1.0 / (1.0 + 1e-8))
        assert abs(float(w.data) - expected) < 1e-15

    def test_pure_decay_semantics(self):
        w = ad.parameter(np.array(2.0))
        opt = AdamW({"w": w}, lr=0.1, weight_decay=0.5)
        opt.step()  # no gradient at all
        assert float(w.data) == 2.0 * (1.0 - 0.1 * 0.5)

    def test_none_grad_treated_as_zero(self):
        w = ad.parameter(np.ones(3))
        opt = AdamW({"w": w}, lr=0.1, weight_decay=0.0)
        opt.step()
        assert np.array_equal(w.data, np.ones(3))

    def test_global_norm_clip(self):
        a = ad.parameter(np.zeros(1))
        b = ad.parameter(np.zeros(1))
        a.grad, b.grad = np.array([3.0]), np.array([4.0])
        opt = AdamW({"a": a, "b": b}, lr=0.1)
        norm = opt.clip_gradients(1.0)
        assert norm == 5.0
        assert np.allclose(a.grad, 0.6) and np.allclose(b.grad, 0.8)

    def test_clip_leaves_small_gradients_alone(self):
        a = ad.parameter(np.zeros(2))
        a.grad = np.array([0.3, 0.4])
        opt = AdamW({"a": a}, lr=0.1)
        assert opt.clip_gradients(1.0) == 0.5
        assert np.array_equal(a.grad, np.array([0.3, 0.4]))


class TestEarlyStop:
    def test_strictly_improving_never_stops(self):
        state = TrainState()
        for m in (0.1, 0.2, 0.3, 0.4):
            assert early_stop_check(state, m, patience=1) == "continue"

    def test_flat_metric_patience_three(self):
        state = TrainState()
        verdicts = [early_stop_check(state, 0.5, patience=3) for _ in range(4)]
        assert verdicts == ["continue", "continue", "continue", "stop"]

    def test_plateau_trace(self):
        state = TrainState()
        trace = [0.5, 0.6, 0.6, 0.6, 0.6]
        verdicts = [early_stop_check(state, m, patience=3) for m in trace]
        assert verdicts == ["continue", "continue", "continue", "continue", "stop"]
        assert state.best_val_metric == 0.6

    def test_bad_patience(self):
        with pytest.raises(InvalidParameterError):
            early_stop_check(TrainState(), 0.5, patience=0)


class TestTrainLoop:
    def test_zero_learning_rate_is_identity(self):
        train_set, val_set = make_sets()
        model = tiny_model(train_set)
        before = model.state_dict()
        cfg = TrainConfig(batch_size=4, epochs=1, learning_rate=0.0,
                          weight_decay=1e-4, early_stop_patience=5, seed=0)
        train(train_set, val_set, cfg, model=model)
        after = model.state_dict()
        for name in before:
            assert np.array_equal(before[name], after[name]), name

    def test_deterministic_history(self):
        train_set, val_set = make_sets()
        cfg = TrainConfig(batch_size=4, epochs=3, learning_rate=1e-3,
                          early_stop_patience=10, seed=5)
        h1 = train(train_set, val_set, cfg, model=tiny_model(train_set)).history
        h2 = train(train_set, val_set, cfg, model=tiny_model(train_set)).history
        assert h1 == h2

    def test_frozen_encoder_untouched(self):
        train_set, val_set = make_sets()
        model = tiny_model(train_set)
        before = model.frozen.state_bytes()
        cfg = TrainConfig(batch_size=4, epochs=2, learning_rate=1e-3,
                          early_stop_patience=10, seed=0)
        train(train_set, val_set, cfg, model=model)
        assert model.frozen.state_bytes() == before

    def test_best_snapshot_restored(self):
        train_set, val_set = make_sets()
        model = tiny_model(train_set)
        cfg = TrainConfig(batch_size=4, epochs=4, learning_rate=1e-3,
                          early_stop_patience=10, seed=0)
        result = train(train_set, val_set, cfg, model=model)
        best = max(v for _, _, v in result.history)
        assert result.state.best_val_metric == best
        # the returned parameters reproduce the best validation score
        assert _fused_top1(result.model, val_set) == pytest.approx(best)

    def test_early_stop_on_flat_metric(self):
        train_set, val_set = make_sets()
        cfg = TrainConfig(batch_size=4, epochs=10, learning_rate=0.0,
                          early_stop_patience=1, seed=0)
        result = train(train_set, val_set, cfg, model=tiny_model(train_set))
        assert result.stopped_early
        assert len(result.history) == 2  # first epoch improves from -inf

    def test_empty_sets_rejected(self):
        train_set, val_set = make_sets()
        cfg = TrainConfig()
        with pytest.raises(InvalidParameterError):
            train([], val_set, cfg)
        with pytest.raises(InvalidParameterError):
            train(train_set, [], cfg)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_loss_aborts_with_diagnostics(self):
        train_set, val_set = make_sets()
        model = tiny_model(train_set)
        # poison the temperature so the first forward overflows
        model.parameters()["loss.log_inv_tau"].data = np.array(1e4, dtype=np.float32)
        cfg = TrainConfig(batch_size=4, epochs=1, learning_rate=1e-3,
                          early_stop_patience=5, seed=0)
        with pytest.raises(NumericalError, match="non-finite"):
            train(train_set, val_set, cfg, model=model)

    def test_overfit_one_batch(self):
        # 8 pairs, 200 steps at lr 3e-3; threshold frozen from a reference run
        train_set, val_set = make_sets(n_train=8, n_val=2, seed=3)
        cfg = TrainConfig(batch_size=8, epochs=200, learning_rate=3e-3,
                          weight_decay=0.0, early_stop_patience=200, seed=0)
        result = train(train_set, val_set, cfg, model=tiny_model(train_set))
        first = result.history[0][1]
        # pick the last epoch actually trained, not the restored-best value
        last = result.history[-1][1]
        assert last < 0.05
        assert last < first / 10.0


class TestPersistence:
    def test_history_csv(self, tmp_path):
        path = tmp_path / "history.csv"
        write_history_csv(path, [(1, 0.5, 0.25), (2, 0.4, 0.5)])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_top1"
        assert len(lines) == 3
        epoch, loss, top1 = lines[1].split(",")
        assert int(epoch) == 1 and float(loss) == 0.5 and float(top1) == 0.25

    def test_checkpoint_round_trip(self, tmp_path):
        train_set, val_set = make_sets()
        model = tiny_model(train_set)
        cfg = TrainConfig(batch_size=4, epochs=1, learning_rate=1e-3, seed=9)
        train(train_set, val_set, cfg, model=model)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, model, cfg)
        loaded, loaded_cfg = load_checkpoint(path)
        assert loaded_cfg == cfg
        orig, new = model.state_dict(), loaded.state_dict()
        assert orig.keys() == new.keys()
        for k in orig:
            assert np.array_equal(orig[k], new[k]), k

    def test_checkpoint_missing_file(self, tmp_path):
        with pytest.raises(InvalidParameterError):
            load_checkpoint(tmp_path / "nope.npz")

    def test_checkpoint_garbage_file(self, tmp_path):
        path = tmp_path / "bad.npz"
        path.write_bytes(b"not an archive")
        with pytest.raises(InvalidParameterError, match="checkpoint"):
            load_checkpoint(path)
