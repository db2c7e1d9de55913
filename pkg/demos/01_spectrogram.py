"""From a click track to a Mel spectrogram and its onset envelope.

Run: python3 demos/01_spectrogram.py
"""
# %% a 120 bpm click track, 15 seconds, 4-beat bars
import numpy as np

from tempogauge.dsp import (FRAME_HOP_SECONDS, crop_window, mel_center_frequencies,
                            mel_spectrogram, onset_envelope, scale_time)
from tempogauge.synthgen import ClickProfile, gen_click_track

clip, bpm = gen_click_track(ClickProfile(bpm=120.0, duration_seconds=15.0, seed=1))
print(f"{len(clip)} samples at {clip.sample_rate} Hz ({clip.duration:.1f} s), annotated {bpm} bpm")

# %% 40 Mel bands between 20 Hz and 5 kHz, one frame every 512 samples
spec = mel_spectrogram(clip)
print("spectrogram shape (bands, frames):", spec.values.shape)
print(f"frame hop {FRAME_HOP_SECONDS * 1000:.1f} ms -> 256 frames = "
      f"{256 * FRAME_HOP_SECONDS:.2f} s")
print("first band centres (Hz):", np.round(mel_center_frequencies()[:5], 1))

# %% the network sees 256-frame windows
window = crop_window(spec, 0)
print("window shape:", window.values.shape)

# %% spectral flux peaks once per beat: 0.5 s / 46.4 ms ~ 10.8 frames
env = onset_envelope(spec)
strong = np.flatnonzero(env > 0.1 * env.max())
print("first onset frames:", strong[:8])

# %% augmentation: c = 1.2 makes the music 20 % faster and the track shorter
faster, mult = scale_time(spec, 1.2)
print(f"scaled to {faster.n_frames} frames; label becomes {bpm * mult:.0f} bpm")
