"""Whole-track estimation by sliding windows, and the Accuracy0/1/2 metrics.

Accuracy0 compares rounded tempi, Accuracy1 allows a 4 % deviation and
Accuracy2 additionally accepts the octave-related factors 2, 3, 1/2 and 1/3
(each with a 4 % margin around the scaled ground truth).
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction

import numpy as np

from .audio_io import MODEL_SAMPLE_RATE, AudioClip, DatasetManifest, load_audio, resample
from .dsp import (BPM_MAX, BPM_MIN, WINDOW_FRAMES, MelSpectrogram, TooShortError, crop_window,
                  mel_spectrogram, round_half_up, stretch_to_window)
from .model import TempoClassDistribution, TempoModel, class_to_bpm

TOLERANCE = 0.04
WINDOW_HOP = 128
OCTAVE_FACTORS = (Fraction(1), Fraction(2), Fraction(1, 2), Fraction(3), Fraction(1, 3))
# float slack so that the +/-4 % boundary is inclusive despite rounding
_SLACK = 1e-9


@dataclass
class TempoEstimate:
    bpm: float
    distribution: TempoClassDistribution
    n_windows: int


def window_offsets(n_frames: int, hop: int = WINDOW_HOP) -> list[int]:
    return list(range(0, n_frames - WINDOW_FRAMES + 1, hop))


def estimate_from_spectrogram(model: TempoModel, spec: MelSpectrogram) -> TempoEstimate:
    T = spec.n_frames
    if T >= WINDOW_FRAMES:
        windows = [crop_window(spec, off) for off in window_offsets(T)]
        probs = model.predict_proba(windows).mean(axis=0)
        dist = TempoClassDistribution(probs, model.config.bpm_lo)
        return TempoEstimate(dist.bpm, dist, len(windows))
    window, ratio = stretch_to_window(spec)
    dist = TempoClassDistribution(model.predict_proba([window])[0], model.config.bpm_lo)
    bpm = float(np.clip(class_to_bpm(dist.argmax(), model.config.bpm_lo) / ratio,
                        BPM_MIN, BPM_MAX))
    return TempoEstimate(bpm, dist, 1)


def estimate_track(model: TempoModel, clip: AudioClip) -> TempoEstimate:
    """Average the class probabilities of half-overlapping windows (hop 128
    frames) and return the most probable class. Tracks shorter than one
    window are stretched to fit and the result is rescaled."""
    if clip.sample_rate != MODEL_SAMPLE_RATE:
        clip = resample(clip, MODEL_SAMPLE_RATE)
    return estimate_from_spectrogram(model, mel_spectrogram(clip))


def _check(est, gt):
    if not (isinstance(gt, (int, float, np.number)) and gt > 0 and math.isfinite(gt)):
        raise ValueError(f"ground truth must be positive and finite, got {gt!r}")
    if not math.isfinite(est):
        raise ValueError(f"estimate must be finite, got {est!r}")


def accuracy0(est: float, gt: float) -> bool:
    _check(est, gt)
    return int(round_half_up(est)) == int(round_half_up(gt))


def accuracy1(est: float, gt: float) -> bool:
    _check(est, gt)
    return abs(est - gt) <= TOLERANCE * gt * (1 + _SLACK)


def accuracy2(est: float, gt: float) -> tuple[bool, Fraction | None]:
    """Returns ``(hit, factor)``; ``factor`` is the matching octave factor
    nearest to 1, or None."""
    _check(est, gt)
    for k in OCTAVE_FACTORS:
        target = float(k) * gt
        if abs(est - target) <= TOLERANCE * target * (1 + _SLACK):
            return True, k
    return False, None


@dataclass
class TrackResult:
    path: str
    dataset: str
    gt_bpm: float
    est_bpm: float | None = None
    acc0: bool = False
    acc1: bool = False
    acc2: bool = False
    octave_factor: Fraction | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "path": self.path, "dataset": self.dataset, "gt_bpm": self.gt_bpm,
            "est_bpm": self.est_bpm, "acc0": self.acc0, "acc1": self.acc1, "acc2": self.acc2,
            "octave_factor_matched": None if self.octave_factor is None else str(self.octave_factor),
            "error": self.error,
        }


@dataclass
class DatasetRow:
    dataset: str
    n_tracks: int
    accuracy0_pct: float
    accuracy1_pct: float
    accuracy2_pct: float


@dataclass
class EvalReport:
    rows: list[DatasetRow] = field(default_factory=list)
    details: list[TrackResult] = field(default_factory=list)
    errors: int = 0
    model_path: str | None = None
    created_at: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def to_dict(self) -> dict:
        return {
            "rows": [vars(r).copy() for r in self.rows],
            "details": [d.to_dict() for d in self.details],
            "model_path": self.model_path,
            "created_at": self.created_at,
            "errors": self.errors,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        """Fixed-width table, one row per dataset, percentages to one decimal."""
        width = max([len("Dataset")] + [len(r.dataset) for r in self.rows])
        lines = [f"{'Dataset':<{width}}  {'N':>5}  {'Accuracy0':>9}  {'Accuracy1':>9}  "
                 f"{'Accuracy2':>9}"]
        for r in self.rows:
            lines.append(f"{r.dataset:<{width}}  {r.n_tracks:>5d}  {r.accuracy0_pct:>9.1f}  "
                         f"{r.accuracy1_pct:>9.1f}  {r.accuracy2_pct:>9.1f}")
        return "\n".join(lines) + "\n"


def score_track(path: str, dataset: str, gt: float, est: float) -> TrackResult:
    hit2, k = accuracy2(est, gt)
    return TrackResult(path, dataset, gt, est, accuracy0(est, gt), accuracy1(est, gt), hit2, k)


def summarize(details: list[TrackResult], model_path=None) -> EvalReport:
    details = sorted(details, key=lambda d: d.path)
    ok = [d for d in details if d.error is None]
    rows = []
    for name in sorted({d.dataset for d in ok}):
        sub = [d for d in ok if d.dataset == name]
        n = len(sub)
        rows.append(DatasetRow(name, n,
                               100.0 * sum(d.acc0 for d in sub) / n,
                               100.0 * sum(d.acc1 for d in sub) / n,
                               100.0 * sum(d.acc2 for d in sub) / n))
    return EvalReport(rows, details, len(details) - len(ok), model_path)


def evaluate_manifest(model: TempoModel, manifest: DatasetManifest, split: str | None = "test",
                      jobs: int | None = 1, model_path=None, estimator=None) -> EvalReport:
    """Estimate every selected track and aggregate Accuracy0/1/2 per dataset.

    ``estimator(model, clip) -> bpm`` replaces :func:`estimate_track` when given.
    Unreadable or too-short files become error rows and are excluded from the
    percentages.
    """
    chosen = manifest.select(split) if split else manifest

    def run(entry) -> TrackResult:
        try:
            clip = load_audio(manifest.resolve(entry))
            est = estimator(model, clip) if estimator else estimate_track(model, clip).bpm
        except (OSError, ValueError, TooShortError) as exc:
            return TrackResult(entry.path, entry.dataset, entry.bpm, error=str(exc))
        return score_track(entry.path, entry.dataset, entry.bpm, est)

    workers = jobs or os.cpu_count() or 1
    if workers == 1:
        details = [run(e) for e in chosen]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            details = list(pool.map(run, chosen.entries))
    return summarize(details, model_path)
