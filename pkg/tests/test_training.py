import json

import numpy as np
import pytest

import tempogauge.training as training
from tempogauge.audio_io import DatasetManifest, ManifestEntry, load_manifest
from tempogauge.dsp import MelSpectrogram
from tempogauge.model import bpm_to_class, load_weights
from tempogauge.synthgen import gen_corpus
from tempogauge.training import (ConfigError, EarlyStopping, TooSmallDatasetError, Track,
                                 TrainConfig, TrainHistory, EpochRecord, checkpoint, dataset_loss,
                                 fit, largest_remainder, load_tracks, make_example,
                                 sample_training_batch, split_dataset, train, validation_windows)


def manifest_of(n, dataset="synth"):
    return DatasetManifest([ManifestEntry(f"t{i:04d}.wav", 100.0, dataset) for i in range(n)])


def random_track(T, bpm=120.0, seed=0):
    return Track(MelSpectrogram(np.random.default_rng(seed).random((40, T))), bpm, f"r{seed}")


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    gen_corpus(8, 80, 160, out, seed=4, duration=(12.5, 14.0))
    return load_manifest(out / "manifest.jsonl")


@pytest.fixture(scope="module")
def small_tracks(small_corpus):
    return load_tracks(small_corpus)


def quick_config(**kw):
    base = dict(batch_size=4, max_epochs=2, early_stop_patience=5, windows_per_track_per_epoch=1,
                seed=1, val_accuracy_every=0)
    base.update(kw)
    return TrainConfig(**base)


# splitting -----------------------------------------------------------------------------

def test_standard_split_is_80_20():
    m = split_dataset(manifest_of(100), seed=0)
    counts = {s: len(m.select(s)) for s in ("train", "val", "test", "unassigned")}
    assert counts == {"train": 80, "val": 20, "test": 0, "unassigned": 0}


def test_three_way_split_uses_largest_remainder():
    m = split_dataset(manifest_of(443, "groove"), seed=0, three_way={"groove"})
    assert [len(m.select(s)) for s in ("train", "val", "test")] == [355, 44, 44]
    assert largest_remainder(443, (0.8, 0.1, 0.1)) == [355, 44, 44]


@pytest.mark.parametrize("n", [1, 7, 10, 99, 443, 1001])
def test_largest_remainder_sums_to_n(n):
    assert sum(largest_remainder(n, (0.8, 0.1, 0.1))) == n
    assert sum(largest_remainder(n, (0.8, 0.2))) == n


def test_split_is_deterministic_and_seed_dependent():
    a = split_dataset(manifest_of(50), seed=3)
    b = split_dataset(manifest_of(50), seed=3)
    c = split_dataset(manifest_of(50), seed=4)
    assert a.entries == b.entries
    assert a.entries != c.entries


def test_split_keeps_existing_assignments_and_test_only():
    entries = [ManifestEntry("fixed.wav", 90, "a", "test")] + list(manifest_of(10, "a")) \
        + list(manifest_of(5, "b").entries)
    entries[-5:] = [ManifestEntry(f"b{i}.wav", 90, "b") for i in range(5)]
    m = split_dataset(DatasetManifest(entries), seed=0, test_only={"b"})
    assert m.entries[0].split == "test"
    assert all(e.split == "test" for e in m.select(dataset="b"))
    assert len(m.select("train", "a")) == 8


def test_three_way_split_needs_ten_entries():
    with pytest.raises(TooSmallDatasetError):
        split_dataset(manifest_of(9, "g"), three_way={"g"})


# examples and batches ----------------------------------------------------------------------

def test_scaled_label_convention():
    ex = make_example(random_track(400, 120.0), np.random.default_rng(0), c=1.2)
    assert ex.target == bpm_to_class(144.0) == 114


def test_identity_factor_gives_exact_crop():
    track = random_track(300, 97.0)

    class FixedRng:
        def integers(self, lo, hi=None):
            return 17

    ex = make_example(track, FixedRng(), c=1.0)
    np.testing.assert_array_equal(ex.window, track.spec.values[:, 17:273])
    assert ex.target == bpm_to_class(97.0)


def test_short_track_is_stretched_and_label_rescaled():
    ex = make_example(random_track(128, 120.0), np.random.default_rng(0), c=1.0)
    assert ex.window.shape == (40, 256)
    assert ex.target == bpm_to_class(60.0)


def test_clamped_labels_are_flagged():
    ex = make_example(random_track(400, 280.0), np.random.default_rng(0), c=1.2)
    assert ex.target == 255 and ex.clamped
    assert not make_example(random_track(400, 120.0), np.random.default_rng(0), c=1.2).clamped


def test_batch_sequence_is_reproducible():
    tracks = [random_track(300 + 10 * i, 80 + 7 * i, seed=i) for i in range(5)]
    a = [sample_training_batch(tracks, 6, r) for r in [np.random.default_rng(9)] for _ in range(3)]
    b = [sample_training_batch(tracks, 6, r) for r in [np.random.default_rng(9)] for _ in range(3)]
    for (wa, ta), (wb, tb) in zip(a, b):
        np.testing.assert_array_equal(wa, wb)
        np.testing.assert_array_equal(ta, tb)
    assert a[0][0].shape == (6, 40, 256) and a[0][1].shape == (6, 256)
    np.testing.assert_array_equal(a[0][1].sum(axis=1), 1)


def test_batch_labels_follow_scale_factor():
    track = random_track(600, 120.0)
    r = np.random.default_rng(2)
    _, targets = sample_training_batch([track], 64, r)
    bpms = 30 + targets.argmax(axis=1)
    assert set(bpms) <= {int(np.floor(120 * c + 0.5)) for c in training.SCALE_FACTORS}
    assert len(set(bpms)) > 5


def test_batch_from_unusable_tracks_fails_cleanly():
    with pytest.raises(ValueError):
        sample_training_batch([random_track(1)], 4, np.random.default_rng(0))


def test_validation_windows_tile_at_unit_scale():
    windows, targets = validation_windows([random_track(600, 100.0), random_track(100, 100.0)])
    assert len(windows) == 3  # two full tiles + one stretched short track
    assert targets.argmax(axis=1).tolist() == [70, 70, bpm_to_class(100.0 * 100 / 256)]


# early stopping ---------------------------------------------------------------------------

def test_early_stopping_definition():
    stopper = EarlyStopping(100)
    stopped_at = None
    for epoch in range(1, 1001):
        loss = 10.0 - 0.01 * min(epoch, 150)
        if stopper.update(epoch, loss):
            stopped_at = epoch
            break
    assert stopped_at == 250 and stopper.best_epoch == 150


def test_equal_loss_is_not_an_improvement():
    stopper = EarlyStopping(2)
    assert not stopper.update(1, 1.0)
    assert not stopper.update(2, 1.0)
    assert stopper.update(3, 1.0)
    assert stopper.best_epoch == 1


def test_fit_restores_best_epoch_parameters(tiny_model, monkeypatch):
    tracks = [random_track(256, 100.0, seed=i) for i in range(2)]
    scripted = iter([10.0 - 0.01 * min(e, 150) for e in range(1, 400)])
    monkeypatch.setattr(training, "dataset_loss", lambda *a, **k: next(scripted))
    seen = {}

    def on_epoch(epoch, model, history):
        if epoch == 150:
            seen["params"] = {k: v.copy() for k, v in model.network.named_params().items()}

    best, history = fit(tiny_model, tracks, tracks,
                        quick_config(batch_size=2, max_epochs=1000, early_stop_patience=100),
                        on_epoch=on_epoch)
    assert len(history.records) == 250
    assert history.best_epoch == 150 and history.stopped_early
    for k, v in best.network.named_params().items():
        np.testing.assert_array_equal(v, seen["params"][k])


def test_max_epochs_caps_the_run(tiny_model):
    tracks = [random_track(300, 100.0, seed=i) for i in range(3)]
    _, history = fit(tiny_model, tracks, tracks,
                     quick_config(max_epochs=5, early_stop_patience=100))
    assert [r.epoch for r in history.records] == [1, 2, 3, 4, 5]
    assert not history.stopped_early


def test_fit_does_not_mutate_input_model(tiny_model):
    before = {k: v.copy() for k, v in tiny_model.network.named_params().items()}
    tracks = [random_track(300, 100.0)]
    fit(tiny_model, tracks, tracks, quick_config(max_epochs=1))
    for k, v in tiny_model.network.named_params().items():
        np.testing.assert_array_equal(v, before[k])


def test_returned_model_is_best_on_validation(tiny_model, small_tracks):
    best, history = fit(tiny_model, small_tracks[:6], small_tracks[6:], quick_config(max_epochs=4))
    assert history.records[history.best_epoch - 1].val_loss == min(history.val_losses)
    w, t = validation_windows(small_tracks[6:])
    assert dataset_loss(best, w, t) == pytest.approx(min(history.val_losses), abs=1e-6)


def test_training_is_reproducible(tiny_model, small_tracks):
    cfg = quick_config(max_epochs=2)
    a, ha = fit(tiny_model, small_tracks[:6], small_tracks[6:], cfg, deterministic=True)
    b, hb = fit(tiny_model, small_tracks[:6], small_tracks[6:], cfg, deterministic=True)
    assert ha.val_losses == hb.val_losses
    for k, v in a.network.named_params().items():
        np.testing.assert_array_equal(v, b.network.named_params()[k])


def test_train_from_manifest(tiny_model, small_corpus):
    m = split_dataset(small_corpus, seed=0)
    best, history = train(m, tiny_model, quick_config(max_epochs=1), jobs=2)
    assert len(history.records) == 1
    with pytest.raises(ValueError):
        train(small_corpus, tiny_model, quick_config())  # nothing assigned yet


# configuration, history and checkpoints -------------------------------------------------

def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError, match="learning_rate"):
        TrainConfig.from_dict({"learning_rate": 0.1})


def test_config_from_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"batch_size": 8, "early_stop_patience": 30}))
    cfg = TrainConfig.from_json(p)
    assert cfg.batch_size == 8 and cfg.early_stop_patience == 30 and cfg.lr == 0.001


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.momentum, cfg.clip, cfg.early_stop_patience) == (0.001, 0.9, 5.0, 100)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_history_records_are_ordered():
    h = TrainHistory()
    h.append(EpochRecord(1, 2.0, 1.5, 0.1))
    with pytest.raises(ValueError):
        h.append(EpochRecord(1, 2.0, 1.5, 0.1))


def test_checkpoint_round_trip(tiny_model, small_tracks, tmp_path):
    def save(epoch, model, history):
        checkpoint(model, history, tmp_path)

    best, history = fit(tiny_model, small_tracks[:6], small_tracks[6:], quick_config(max_epochs=3),
                        on_epoch=save)
    records = json.loads((tmp_path / "history.json").read_text())
    assert [r["epoch"] for r in records] == [1, 2, 3]
    assert {"epoch", "train_loss", "val_loss", "seconds"} <= set(records[0])
    # the last checkpoint holds the epoch-3 parameters
    w, t = validation_windows(small_tracks[6:])
    assert dataset_loss(load_weights(tmp_path / "best.tgw"), w, t) == \
        pytest.approx(history.val_losses[-1], abs=1e-6)


def test_interrupted_checkpoint_keeps_previous(tiny_model, tmp_path, monkeypatch):
    h = TrainHistory([EpochRecord(1, 2.0, 1.5, 0.1)])
    checkpoint(tiny_model, h, tmp_path)
    before = (tmp_path / "best.tgw").read_bytes()
    import tempogauge.model as model_mod

    def crash(*a, **k):
        raise KeyboardInterrupt

    monkeypatch.setattr(model_mod.os, "replace", crash)
    other = tiny_model.copy()
    for v in other.network.named_params().values():
        v += 1
    with pytest.raises(KeyboardInterrupt):
        checkpoint(other, h, tmp_path)
    assert (tmp_path / "best.tgw").read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["best.tgw", "history.json"]


def test_checkpoint_needs_existing_directory(tiny_model, tmp_path):
    with pytest.raises(OSError):
        checkpoint(tiny_model, TrainHistory(), tmp_path / "missing")
