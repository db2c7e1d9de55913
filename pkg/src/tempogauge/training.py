"""Dataset splitting, augmented window sampling and the training loop with
patience-based early stopping."""

from __future__ import annotations

import json
import logging
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .audio_io import DatasetManifest, load_audio
from .dsp import (SCALE_FACTORS, WINDOW_FRAMES, MelSpectrogram, crop_window, mel_spectrogram,
                  round_half_up, scale_time, stretch_to_window)
from .model import TempoModel, atomic_write, bpm_to_class, save_weights
from .nn import cce_loss, sgd_step, softmax_cce

log = logging.getLogger(__name__)


class TooSmallDatasetError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, batch, loss):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch, self.loss = epoch, batch, loss


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 1000
    early_stop_patience: int = 100
    windows_per_track_per_epoch: int = 4
    seed: int = 0
    lr: float = 0.001
    momentum: float = 0.9
    clip: float = 5.0
    val_accuracy_every: int = 10

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.max_epochs < 1 or self.windows_per_track_per_epoch < 1:
            raise ConfigError("max_epochs and windows_per_track_per_epoch must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown training config key {key!r}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float
    val_acc0: float | None = None
    val_acc1: float | None = None
    clamped_labels: int = 0


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        self.records.append(rec)

    @property
    def val_losses(self) -> list[float]:
        return [r.val_loss for r in self.records]

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self.records], indent=1)


# splitting -------------------------------------------------------------------------

def largest_remainder(n: int, fractions) -> list[int]:
    """Integer parts of ``n * fractions`` summing to ``n``; leftovers go to the
    largest fractional remainders (earlier parts win ties)."""
    raw = [n * f for f in fractions]
    counts = [math.floor(r) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(manifest: DatasetManifest, seed: int = 0, three_way=(), test_only=()
                  ) -> DatasetManifest:
    """Assign unassigned entries to train/val(/test).

    Datasets named in ``three_way`` are split 80/10/10, those in ``test_only``
    go entirely to test, every other dataset is split 80/20 train/val.
    Pre-assigned splits are kept. Deterministic in ``seed``.
    """
    three_way, test_only = set(three_way), set(test_only)
    assigned = {}
    for name in manifest.datasets():
        pending = sorted(e.path for e in manifest.entries
                         if e.dataset == name and e.split == "unassigned")
        if not pending:
            continue
        if name in test_only:
            assigned.update({p: "test" for p in pending})
            continue
        if name in three_way:
            if len(pending) < 10:
                raise TooSmallDatasetError(
                    f"dataset {name!r} has {len(pending)} entries; 80/10/10 needs at least 10"
                )
            labels = ["train", "val", "test"]
            counts = largest_remainder(len(pending), (0.8, 0.1, 0.1))
        else:
            labels = ["train", "val"]
            counts = largest_remainder(len(pending), (0.8, 0.2))
        rng = np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])
        order = rng.permutation(len(pending))
        pos = 0
        for label, count in zip(labels, counts):
            for i in order[pos:pos + count]:
                assigned[pending[i]] = label
            pos += count
    entries = [replace(e, split=assigned.get(e.path, e.split)) for e in manifest.entries]
    return DatasetManifest(entries, manifest.root)


# examples ---------------------------------------------------------------------------

@dataclass
class Track:
    spec: MelSpectrogram
    bpm: float
    path: str = ""


def load_tracks(manifest: DatasetManifest, cache: dict | None = None,
                jobs: int = 1) -> list[Track]:
    """Mel spectrograms for every manifest entry (memoised in ``cache``)."""
    cache = {} if cache is None else cache

    def spectrogram(entry):
        key = str(manifest.resolve(entry))
        if key not in cache:
            cache[key] = mel_spectrogram(load_audio(key))
        return cache[key]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            specs = list(pool.map(spectrogram, manifest.entries))
    else:
        specs = [spectrogram(e) for e in manifest.entries]
    return [Track(s, float(e.bpm), e.path) for s, e in zip(specs, manifest.entries)]


@dataclass
class Example:
    window: np.ndarray
    target: int
    clamped: bool


def make_example(track: Track, rng: np.random.Generator, c: float | None = None,
                 bpm_lo=30, n_classes=256) -> Example | None:
    """One augmented training window: random scale factor, then a random
    crop (or a stretch when the scaled track is shorter than a window)."""
    if c is None:
        c = SCALE_FACTORS[int(rng.integers(len(SCALE_FACTORS)))]
    if track.spec.n_frames < 2:
        return None
    scaled, mult = scale_time(track.spec, c)
    bpm = track.bpm * mult
    T = scaled.n_frames
    if T >= WINDOW_FRAMES:
        offset = int(rng.integers(0, T - WINDOW_FRAMES + 1))
        values = crop_window(scaled, offset).values
    elif T >= 2:
        win, ratio = stretch_to_window(scaled)
        values = win.values
        bpm *= ratio
    else:
        return None
    target = bpm_to_class(bpm, bpm_lo, n_classes)
    return Example(values, target, int(round_half_up(bpm)) - bpm_lo != target)


def sample_training_batch(tracks: list[Track], batch_size: int, rng: np.random.Generator,
                          n_classes: int = 256):
    """``(windows, one-hot targets)`` from uniformly chosen tracks."""
    windows, targets = [], []
    attempts = 0
    while len(windows) < batch_size:
        attempts += 1
        if attempts > 100 * batch_size:
            raise ValueError("no track long enough to sample from")
        track = tracks[int(rng.integers(len(tracks)))]
        ex = make_example(track, rng, n_classes=n_classes)
        if ex is None:
            log.warning("skipping %s: too short after scaling", track.path)
            continue
        windows.append(ex.window)
        targets.append(ex.target)
    return np.stack(windows), np.eye(n_classes)[targets]


def validation_windows(tracks: list[Track], bpm_lo=30, n_classes=256):
    """Deterministic validation set: non-overlapping 256-frame tiles at c = 1."""
    windows, targets = [], []
    for track in tracks:
        T = track.spec.n_frames
        if T >= WINDOW_FRAMES:
            for off in range(0, T - WINDOW_FRAMES + 1, WINDOW_FRAMES):
                windows.append(crop_window(track.spec, off).values)
                targets.append(bpm_to_class(track.bpm, bpm_lo, n_classes))
        elif T >= 2:
            win, ratio = stretch_to_window(track.spec)
            windows.append(win.values)
            targets.append(bpm_to_class(track.bpm * ratio, bpm_lo, n_classes))
    return windows, np.eye(n_classes)[targets]


def dataset_loss(model: TempoModel, windows, targets, batch_size=64) -> float:
    """Mean cross-entropy in inference mode."""
    probs = model.predict_proba(windows, batch_size)
    return cce_loss(probs, targets)


# loop ------------------------------------------------------------------------------------

class EarlyStopping:
    """Tracks the best validation loss; ``update`` returns True when
    ``patience`` epochs have passed without a strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = None

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best, self.best_epoch = val_loss, epoch
            return False
        return epoch - self.best_epoch >= self.patience


def _snapshot(model: TempoModel):
    net = model.network
    return ({k: v.copy() for k, v in net.named_params().items()},
            {k: v.copy() for k, v in net.named_buffers().items()})


def _restore(model: TempoModel, snap):
    params, buffers = snap
    for k, v in model.network.named_params().items():
        v[...] = params[k]
    for k, v in model.network.named_buffers().items():
        v[...] = buffers[k]


def _track_accuracy(model, tracks):
    from .evaluation import accuracy0, accuracy1, estimate_from_spectrogram
    hits0 = hits1 = 0
    for t in tracks:
        est = estimate_from_spectrogram(model, t.spec).bpm
        hits0 += accuracy0(est, t.bpm)
        hits1 += accuracy1(est, t.bpm)
    return 100.0 * hits0 / len(tracks), 100.0 * hits1 / len(tracks)


def fit(model: TempoModel, train_tracks: list[Track], val_tracks: list[Track],
        config: TrainConfig, deterministic: bool = False, on_epoch=None):
    """Train a copy of ``model``; returns ``(best_model, history)``.

    ``on_epoch(epoch, model, history)`` is called after each epoch, e.g. for
    checkpointing.
    """
    if not train_tracks or not val_tracks:
        raise ValueError("need at least one training and one validation track")
    ctx = nullcontext()
    if deterministic:
        from threadpoolctl import threadpool_limits
        ctx = threadpool_limits(limits=1)
    with ctx:
        return _fit(model.copy(), train_tracks, val_tracks, config, on_epoch)


def _fit(model, train_tracks, val_tracks, config, on_epoch):
    cfg = model.config
    rng = np.random.default_rng(config.seed)
    params = model.network.parameters()
    val_w, val_t = validation_windows(val_tracks, cfg.bpm_lo, cfg.n_classes)
    stopper = EarlyStopping(config.early_stop_patience)
    history = TrainHistory()
    best = None

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(np.repeat(np.arange(len(train_tracks)),
                                          config.windows_per_track_per_epoch))
        losses, clamped = [], 0
        for b, start in enumerate(range(0, len(order), config.batch_size), 1):
            windows, targets = [], []
            for i in order[start:start + config.batch_size]:
                ex = make_example(train_tracks[i], rng, bpm_lo=cfg.bpm_lo, n_classes=cfg.n_classes)
                if ex is None:
                    log.warning("skipping %s: too short after scaling", train_tracks[i].path)
                    continue
                windows.append(ex.window)
                targets.append(ex.target)
                clamped += ex.clamped
            if not windows:
                continue
            x = model.prepare(windows)
            onehot = np.eye(cfg.n_classes, dtype=x.dtype)[targets]
            logits = model.logits(x, training=True, rng=rng)
            loss, _, dlogits = softmax_cce(logits, onehot)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, b, loss)
            model.network.backward(dlogits)
            sgd_step(params, model.network.named_grads(), config.lr, config.momentum, config.clip)
            losses.append(loss)

        val_loss = dataset_loss(model, val_w, val_t)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(epoch, None, val_loss)
        rec = EpochRecord(epoch, float(np.mean(losses)), val_loss, 0.0, clamped_labels=clamped)
        if config.val_accuracy_every and epoch % config.val_accuracy_every == 0:
            rec.val_acc0, rec.val_acc1 = _track_accuracy(model, val_tracks)
        rec.seconds = time.perf_counter() - t0
        history.append(rec)

        stop = stopper.update(epoch, val_loss)
        if stopper.best_epoch == epoch:
            best = _snapshot(model)
        history.best_epoch = stopper.best_epoch
        acc = "" if rec.val_acc1 is None else f" acc0 {rec.val_acc0:.1f} acc1 {rec.val_acc1:.1f}"
        log.info("epoch %d train %.4f val %.4f%s%s (%.1fs)", epoch, rec.train_loss, val_loss, acc,
                 " *" if stopper.best_epoch == epoch else "", rec.seconds)
        if on_epoch is not None:
            on_epoch(epoch, model, history)
        if stop:
            history.stopped_early = True
            break

    _restore(model, best)
    return model, history


def train(manifest: DatasetManifest, model: TempoModel, config: TrainConfig,
          deterministic: bool = False, on_epoch=None, cache: dict | None = None, jobs: int = 1):
    """Train on the manifest's ``train`` split, early-stopping on ``val``.

    ``jobs`` parallelises spectrogram computation; it is forced to 1 when
    ``deterministic`` is set.
    """
    if deterministic:
        jobs = 1
    train_m = manifest.select("train")
    val_m = manifest.select("val")
    if not len(train_m) or not len(val_m):
        raise ValueError("manifest needs at least one train and one val entry")
    return fit(model, load_tracks(train_m, cache, jobs), load_tracks(val_m, cache, jobs), config,
               deterministic, on_epoch)


def checkpoint(model: TempoModel, history: TrainHistory, directory) -> tuple[Path, Path]:
    """Write ``best.tgw`` and ``history.json`` atomically into ``directory``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise OSError(f"checkpoint directory {directory} does not exist")
    weights = directory / "best.tgw"
    hist = directory / "history.json"
    save_weights(model, weights)
    atomic_write(hist, history.to_json().encode("utf-8"))
    return weights, hist
