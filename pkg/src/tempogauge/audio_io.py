"""Audio decoding, resampling and tempo-annotated dataset manifests.

WAV files are parsed directly (RIFF chunks) so that 24-bit PCM and 32-bit
IEEE float are handled the same way as 8/16-bit PCM. Every clip is reduced
to mono float64 samples in [-1, 1].
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MODEL_SAMPLE_RATE = 11025
SPLITS = ("train", "val", "test", "unassigned")

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavFormatError(ValueError):
    """Malformed or truncated RIFF/WAVE data."""


class UnsupportedFormatError(WavFormatError):
    """Well-formed WAVE file using a codec or layout we do not decode."""


class ManifestError(ValueError):
    """A manifest line failed validation."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = pos + 8
        if body + size > len(data):
            raise WavFormatError(
                f"chunk {cid!r} declares {size} bytes but only {len(data) - body} remain"
            )
        yield cid, data[body:body + size]
        pos = body + size + (size & 1)


def decode_wav(data: bytes) -> AudioClip:
    """Decode a RIFF/WAVE byte string into a mono :class:`AudioClip`.

    Integer PCM is scaled by ``2**(bits-1)`` (8-bit data is unsigned and is
    re-centred first); stereo is averaged per sample.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE stream")

    fmt = None
    payload = None
    for cid, body in _iter_chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavFormatError("fmt chunk too short")
            fmt = body
        elif cid == b"data":
            payload = body
    if fmt is None:
        raise WavFormatError("missing fmt chunk")
    if payload is None:
        raise WavFormatError("missing data chunk")

    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise WavFormatError("extensible fmt chunk too short")
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if tag not in (_WAVE_FORMAT_PCM, _WAVE_FORMAT_IEEE_FLOAT):
        raise UnsupportedFormatError(f"unsupported WAVE format tag 0x{tag:04x}")
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{channels} channels; only mono and stereo are decoded")
    if rate == 0:
        raise WavFormatError("sample rate of zero")
    if tag == _WAVE_FORMAT_IEEE_FLOAT and bits != 32:
        raise UnsupportedFormatError(f"{bits}-bit float samples")
    if tag == _WAVE_FORMAT_PCM and bits not in (8, 16, 24):
        raise UnsupportedFormatError(f"{bits}-bit integer PCM")

    width = bits // 8
    if block_align != width * channels:
        raise WavFormatError(f"block align {block_align} inconsistent with {channels}x{bits}-bit")
    n_frames = len(payload) // block_align
    raw = payload[: n_frames * block_align]

    if tag == _WAVE_FORMAT_IEEE_FLOAT:
        x = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    elif bits == 8:
        x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif bits == 16:
        x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    else:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v.astype(np.float64) / float(1 << 23)

    x = x.reshape(n_frames, channels).mean(axis=1)
    if not np.all(np.isfinite(x)):
        raise WavFormatError("non-finite float samples")
    return AudioClip(x, rate)


def encode_wav(clip: AudioClip) -> bytes:
    """Encode a clip as 16-bit PCM mono WAV bytes (values clipped to [-1, 1))."""
    q = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = q.tobytes()
    fmt = struct.pack("<HHIIHH", _WAVE_FORMAT_PCM, 1, clip.sample_rate,
                      clip.sample_rate * 2, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def read_wav(path) -> AudioClip:
    return decode_wav(Path(path).read_bytes())


def write_wav(path, clip: AudioClip) -> None:
    Path(path).write_bytes(encode_wav(clip))


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampling to ``target_rate``.

    The output has ``round(len * target / source)`` samples. No anti-alias
    filter is applied.
    """
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    n_out = int(math.floor(len(clip) * target_rate / clip.sample_rate + 0.5))
    if n_out == 0:
        return AudioClip(np.zeros(0), target_rate)
    pos = np.arange(n_out) * (clip.sample_rate / target_rate)
    src = np.arange(len(clip))
    return AudioClip(np.interp(pos, src, clip.samples), target_rate)


def load_audio(path, sample_rate: int = MODEL_SAMPLE_RATE) -> AudioClip:
    """Read a WAV file and bring it to ``sample_rate``."""
    return resample(read_wav(path), sample_rate)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    bpm: float
    dataset: str
    split: str = "unassigned"

    def to_dict(self) -> dict:
        return {"path": self.path, "bpm": self.bpm, "dataset": self.dataset, "split": self.split}


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = None

    def __post_init__(self):
        seen = set()
        for i, e in enumerate(self.entries, 1):
            _check_entry(e, i)
            if e.path in seen:
                raise ManifestError(f"line {i}: duplicate path {e.path!r}")
            seen.add(e.path)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        """Absolute location of an entry's audio; relative paths are taken
        relative to the manifest's directory."""
        p = Path(entry.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def select(self, split: str | None = None, dataset: str | None = None) -> "DatasetManifest":
        keep = [e for e in self.entries
                if (split is None or e.split == split) and (dataset is None or e.dataset == dataset)]
        return DatasetManifest(keep, self.root)

    def datasets(self) -> list[str]:
        return sorted({e.dataset for e in self.entries})


def _check_entry(e: ManifestEntry, line: int) -> None:
    if isinstance(e.bpm, bool) or not isinstance(e.bpm, (int, float)):
        raise ManifestError(f"line {line}: bpm must be a number, got {e.bpm!r}")
    if not math.isfinite(e.bpm) or e.bpm <= 0:
        raise ManifestError(f"line {line}: bpm must be positive and finite, got {e.bpm!r}")
    if not isinstance(e.path, str) or not e.path:
        raise ManifestError(f"line {line}: path must be a non-empty string")
    if not isinstance(e.dataset, str):
        raise ManifestError(f"line {line}: dataset must be a string")
    if e.split not in SPLITS:
        raise ManifestError(f"line {line}: split must be one of {SPLITS}, got {e.split!r}")


def parse_manifest(text: str, root=None) -> DatasetManifest:
    entries = []
    seen = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ManifestError(f"line {lineno}: expected a JSON object")
        for key in ("path", "bpm", "dataset"):
            if key not in obj:
                raise ManifestError(f"line {lineno}: missing {key!r}")
        entry = ManifestEntry(obj["path"], obj["bpm"], obj["dataset"],
                              obj.get("split", "unassigned"))
        _check_entry(entry, lineno)
        if entry.path in seen:
            raise ManifestError(
                f"line {lineno}: duplicate path {entry.path!r} (first seen on line {seen[entry.path]})"
            )
        seen[entry.path] = lineno
        entries.append(entry)
    return DatasetManifest(entries, Path(root) if root is not None else None)


def load_manifest(path) -> DatasetManifest:
    """Load a JSON Lines manifest; unknown keys are ignored."""
    path = Path(path)
    return parse_manifest(path.read_text(encoding="utf-8"), root=path.parent)


def dump_manifest(manifest: DatasetManifest) -> str:
    return "".join(json.dumps(e.to_dict()) + "\n" for e in manifest.entries)


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(dump_manifest(manifest), encoding="utf-8")
