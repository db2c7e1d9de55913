"""Synthetic percussion tracks with exactly known tempo.

Clicks are short exponentially decaying noise bursts. Bar downbeats are
accented by +6 dB; off-beat subdivision hits sit 12 dB below the beat.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio_io import (MODEL_SAMPLE_RATE, AudioClip, DatasetManifest, ManifestEntry,
                       save_manifest, write_wav)
from .dsp import BPM_MAX, BPM_MIN

ACCENT_GAIN = 10 ** (6 / 20)
SUBDIVISION_GAIN = 10 ** (-12 / 20)
PEAK = 0.9


@dataclass(frozen=True)
class ClickProfile:
    bpm: float
    duration_seconds: float = 30.0
    subdivision: int = 1
    accent_period: int = 4
    click_decay_ms: float = 5.0
    noise_snr_db: float | None = None
    seed: int = 0

    def validate(self) -> None:
        if not BPM_MIN <= self.bpm <= BPM_MAX:
            raise ValueError(f"bpm {self.bpm} outside [{BPM_MIN:g}, {BPM_MAX:g}]")
        if self.duration_seconds < 12:
            raise ValueError("duration must be at least 12 s")
        if self.subdivision not in (1, 2, 3):
            raise ValueError("subdivision must be 1, 2 or 3")
        if self.accent_period not in (3, 4, 6):
            raise ValueError("accent_period must be 3, 4 or 6")
        if self.click_decay_ms <= 0:
            raise ValueError("click decay must be positive")


def onset_times(profile: ClickProfile) -> np.ndarray:
    """Hit times in seconds, beats and subdivisions interleaved."""
    step = 60.0 / (profile.bpm * profile.subdivision)
    n = int(np.floor(profile.duration_seconds / step)) + 1
    t = np.arange(n) * step
    return t[t < profile.duration_seconds]


def gen_click_track(profile: ClickProfile, sample_rate: int = MODEL_SAMPLE_RATE):
    """Render a click track. Returns ``(clip, bpm)``."""
    profile.validate()
    rng = np.random.default_rng(profile.seed)
    n = int(round(profile.duration_seconds * sample_rate))
    out = np.zeros(n)

    tau = profile.click_decay_ms / 1000.0 * sample_rate
    length = int(np.ceil(6 * tau))
    shape = np.exp(-np.arange(length) / tau)

    for k, t in enumerate(onset_times(profile)):
        start = int(round(t * sample_rate))
        if start >= n:
            break
        if k % profile.subdivision:
            gain = SUBDIVISION_GAIN
        elif (k // profile.subdivision) % profile.accent_period == 0:
            gain = ACCENT_GAIN
        else:
            gain = 1.0
        burst = gain * shape * rng.uniform(-1.0, 1.0, length)
        stop = min(n, start + length)
        out[start:stop] += burst[: stop - start]

    if profile.noise_snr_db is not None:
        power = np.mean(out ** 2)
        noise_power = power / 10 ** (profile.noise_snr_db / 10)
        out += rng.normal(0.0, np.sqrt(noise_power), n)

    peak = np.abs(out).max()
    if peak > 0:
        out *= PEAK / peak
    return AudioClip(out, sample_rate), float(profile.bpm)


def random_profile(rng: np.random.Generator, bpm_lo: float, bpm_hi: float,
                   duration=(15.0, 30.0)) -> ClickProfile:
    """Draw a mixed profile; a sixth of them are 6/8-style (6-beat bars, triplets)."""
    bpm = float(rng.uniform(bpm_lo, bpm_hi))
    if rng.random() < 1 / 6:
        sub, accent = 3, 6
    else:
        sub = int(rng.choice([1, 2, 3]))
        accent = int(rng.choice([3, 4]))
    snr = [None, 20.0, 10.0][int(rng.integers(3))]
    return ClickProfile(
        bpm=bpm,
        duration_seconds=float(rng.uniform(*duration)),
        subdivision=sub,
        accent_period=accent,
        click_decay_ms=float(rng.uniform(3.0, 8.0)),
        noise_snr_db=snr,
        seed=int(rng.integers(2**31)),
    )


def gen_corpus(n: int, bpm_lo: float, bpm_hi: float, out_dir, seed: int = 0,
               dataset: str = "synth", jobs: int | None = None,
               duration=(15.0, 30.0)) -> DatasetManifest:
    """Write ``n`` click tracks plus ``manifest.jsonl`` into ``out_dir``."""
    if not (BPM_MIN <= bpm_lo <= bpm_hi <= BPM_MAX):
        raise ValueError(f"bpm range [{bpm_lo}, {bpm_hi}] not within [{BPM_MIN:g}, {BPM_MAX:g}]")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    profiles = [random_profile(rng, bpm_lo, bpm_hi, duration) for _ in range(n)]
    names = [f"{dataset}_{i:05d}.wav" for i in range(n)]

    def render(i):
        path = out_dir / names[i]
        try:
            clip, _ = gen_click_track(profiles[i])
            write_wav(path, clip)
        except OSError as exc:
            raise OSError(f"failed writing {path}: {exc}") from exc

    with ThreadPoolExecutor(max_workers=jobs or os.cpu_count() or 1) as pool:
        list(pool.map(render, range(n)))

    manifest = DatasetManifest(
        [ManifestEntry(names[i], profiles[i].bpm, dataset) for i in range(n)], out_dir
    )
    with open(out_dir / "profiles.jsonl", "w", encoding="utf-8") as fh:
        for name, p in zip(names, profiles):
            fh.write(json.dumps({"path": name, **asdict(p)}) + "\n")
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
