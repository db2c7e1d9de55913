"""The bidirectional-RNN tempo classifier, tempo class mapping, input
normalisation and the ``.tgw`` weights format.

Network: 3 bidirectional tanh RNN layers (25 units per direction), time
average pooling (k=5), batch norm, dropout, dense(2048, ELU), batch norm,
dense(512, ELU), dense(256, softmax). Class ``i`` is ``30 + i`` bpm.
"""

from __future__ import annotations

import copy
import json
import os
import struct
import tempfile
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dsp import N_MELS, WINDOW_FRAMES, SpectrogramWindow, round_half_up
from .nn import (BRNN, Activation, AvgPoolTime, BatchNorm, Dense, Dropout, Flatten, Sequential,
                 softmax)

REFERENCE_PARAMETER_COUNT = 6_583_772
NORM_EPS = 1e-5
MAGIC = b"TGW"
FORMAT_VERSION = 1


class WeightsError(ValueError):
    pass


class WeightsVersionError(WeightsError):
    pass


class WeightsCorruptionError(WeightsError):
    pass


class WeightsValidationError(WeightsError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_mels: int = N_MELS
    window_frames: int = WINDOW_FRAMES
    rnn_layers: int = 3
    rnn_units_per_direction: int = 25
    pool_k: int = 5
    dense_widths: tuple[int, ...] = (2048, 512)
    n_classes: int = 256
    bpm_lo: int = 30
    dropout_p: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "dense_widths", tuple(int(w) for w in self.dense_widths))
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.pool_k < 1 or self.window_frames < self.pool_k:
            raise ValueError("pool_k must be in [1, window_frames]")
        if min(self.dense_widths + (self.n_mels, self.rnn_layers,
                                    self.rnn_units_per_direction, self.n_classes)) < 1:
            raise ValueError("all widths must be >= 1")

    @property
    def bpm_hi(self) -> int:
        return self.bpm_lo + self.n_classes - 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dense_widths"] = list(self.dense_widths)
        return d


@dataclass
class TempoClassDistribution:
    probs: np.ndarray
    bpm_lo: int = 30

    def argmax(self) -> int:
        return int(np.argmax(self.probs))  # first maximum: ties go to the lower class

    @property
    def bpm(self) -> float:
        return float(self.bpm_lo + self.argmax())


def bpm_to_class(bpm: float, bpm_lo: int = 30, n_classes: int = 256) -> int:
    if not np.isfinite(bpm) or bpm <= 0:
        raise ValueError(f"bpm must be positive, got {bpm}")
    return int(np.clip(round_half_up(bpm) - bpm_lo, 0, n_classes - 1))


def class_to_bpm(i: int, bpm_lo: int = 30) -> float:
    return float(bpm_lo + i)


def normalize_input(window) -> np.ndarray:
    """Standardise a window by its own global mean and std (+1e-5)."""
    v = window.values if isinstance(window, SpectrogramWindow) else np.asarray(window)
    v = v.astype(np.float64)
    if np.ptp(v) == 0:
        # the mean of a constant is not always that constant in floating point
        return np.zeros_like(v)
    return (v - v.mean()) / (v.std() + NORM_EPS)


def _build_network(config: ModelConfig, rng, dtype) -> Sequential:
    layers = []
    n_in = config.n_mels
    H = config.rnn_units_per_direction
    for i in range(config.rnn_layers):
        layers.append((f"brnn{i + 1}", BRNN(n_in, H, rng, dtype)))
        n_in = 2 * H
    steps = config.window_frames // config.pool_k
    layers += [
        ("pool", AvgPoolTime(config.pool_k)),
        ("bn1", BatchNorm(n_in, dtype=dtype)),
        ("dropout", Dropout(config.dropout_p)),
        ("flatten", Flatten()),
    ]
    width = steps * n_in
    for i, w in enumerate(config.dense_widths):
        layers.append((f"dense{i + 1}", Dense(width, w, rng, dtype)))
        layers.append((f"elu{i + 1}", Activation("elu")))
        if i == 0 and len(config.dense_widths) > 1:
            layers.append(("bn2", BatchNorm(w, dtype=dtype)))
        width = w
    layers.append(("output", Dense(width, config.n_classes, rng, dtype)))
    return Sequential(layers)


@dataclass
class TempoModel:
    """A configured network plus the metadata needed to reproduce it."""

    config: ModelConfig
    network: Sequential
    seed: int | None = None
    normalization: dict = field(default_factory=lambda: {"kind": "window_standardize",
                                                         "eps": NORM_EPS})

    def parameter_count(self) -> int:
        return self.network.n_params()

    def recurrent_parameter_count(self) -> int:
        return sum(layer.n_params() for name, layer in self.network if name.startswith("brnn"))

    def copy(self) -> "TempoModel":
        return copy.deepcopy(self)

    def prepare(self, windows) -> np.ndarray:
        """Normalise a batch of ``(40, 256)`` windows into network input
        ``(batch, 256, 40)``."""
        arr = np.stack([normalize_input(w) for w in windows])
        return arr.transpose(0, 2, 1).astype(self.dtype)

    @property
    def dtype(self):
        return self.network["output"].params["W"].dtype

    def logits(self, x, training=False, rng=None):
        return self.network.forward(x, training, rng)

    def predict_proba(self, windows, batch_size=64) -> np.ndarray:
        """Class probabilities for a batch of windows, shape ``(n, n_classes)``."""
        windows = list(windows)
        out = []
        for i in range(0, len(windows), batch_size):
            x = self.prepare(windows[i:i + batch_size])
            out.append(softmax(self.logits(x).astype(np.float64)))
        if not out:
            return np.zeros((0, self.config.n_classes))
        return np.concatenate(out)

    def predict_window(self, window) -> TempoClassDistribution:
        return TempoClassDistribution(self.predict_proba([window])[0], self.config.bpm_lo)


def build_model(config: ModelConfig | None = None, seed: int = 0, dtype=np.float32,
                report=None) -> TempoModel:
    """Fresh model with Glorot-uniform weights drawn from ``seed``.

    ``report``, if given, is called with a one-line parameter summary.
    """
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    model = TempoModel(config, _build_network(config, rng, dtype), seed)
    if report is not None:
        report(
            f"trainable parameters: {model.parameter_count():,} "
            f"(recurrent stack {model.recurrent_parameter_count():,}; "
            f"published model: {REFERENCE_PARAMETER_COUNT:,})"
        )
    return model


# weights file -------------------------------------------------------------------
#
# "TGW" + version byte (ASCII digit) | uint32 header length | JSON header |
# float32 little-endian tensors in header order | CRC32 of everything before it.

def _tensors(model: TempoModel):
    for name, arr in model.network.named_params().items():
        yield name, "param", arr
    for name, arr in model.network.named_buffers().items():
        yield name, "buffer", arr


def dumps_weights(model: TempoModel) -> bytes:
    entries, blobs = [], []
    for name, kind, arr in _tensors(model):
        entries.append({"name": name, "kind": kind, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    header = json.dumps({
        "config": model.config.to_dict(),
        "tensors": entries,
        "normalization": model.normalization,
        "seed": model.seed,
    }, sort_keys=True).encode("utf-8")
    body = MAGIC + str(FORMAT_VERSION).encode("ascii") + struct.pack("<I", len(header)) + header
    body += b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body))


def loads_weights(data: bytes) -> TempoModel:
    if len(data) < 4 or data[:3] != MAGIC:
        raise WeightsCorruptionError("not a tempo weights file (bad magic)")
    version = chr(data[3])
    if version != str(FORMAT_VERSION):
        raise WeightsVersionError(
            f"weights file has format version {version!r}, this build reads version "
            f"{str(FORMAT_VERSION)!r}"
        )
    if len(data) < 12:
        raise WeightsCorruptionError("weights file truncated")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise WeightsCorruptionError("checksum mismatch (file truncated or corrupted)")
    (hlen,) = struct.unpack_from("<I", data, 4)
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
        config = ModelConfig(**header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise WeightsCorruptionError(f"unreadable header: {exc}") from None

    model = TempoModel(config, _build_network(config, np.random.default_rng(0), np.float32),
                       header.get("seed"), header.get("normalization") or {})
    expected = {name: (kind, arr) for name, kind, arr in _tensors(model)}
    listed = [t["name"] for t in header["tensors"]]
    if sorted(listed) != sorted(expected):
        missing = sorted(set(expected) - set(listed))
        extra = sorted(set(listed) - set(expected))
        raise WeightsValidationError(f"tensor names do not match config (missing {missing}, "
                                     f"unexpected {extra})")
    pos = 8 + hlen
    for t in header["tensors"]:
        _, target = expected[t["name"]]
        if tuple(t["shape"]) != target.shape:
            raise WeightsValidationError(
                f"{t['name']}: stored shape {tuple(t['shape'])}, config implies {target.shape}"
            )
        nbytes = 4 * target.size
        if pos + nbytes > len(data) - 4:
            raise WeightsCorruptionError("tensor data truncated")
        target[...] = np.frombuffer(data, dtype="<f4", count=target.size,
                                    offset=pos).reshape(target.shape)
        pos += nbytes
    if pos != len(data) - 4:
        raise WeightsCorruptionError(f"{len(data) - 4 - pos} trailing bytes after tensors")
    return model


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def save_weights(model: TempoModel, path) -> None:
    atomic_write(path, dumps_weights(model))


def load_weights(path) -> TempoModel:
    return loads_weights(Path(path).read_bytes())
