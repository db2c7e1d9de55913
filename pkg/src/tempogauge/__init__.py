"""tempogauge: tempo estimation with a bidirectional recurrent classifier over
Mel spectrograms, plus an autocorrelation reference estimator."""

__version__ = "0.1.0"

from .audio_io import AudioClip, DatasetManifest, decode_wav, load_manifest, resample
from .dsp import MelSpectrogram, SpectrogramWindow, autocorr_tempo, mel_spectrogram, onset_envelope
from .evaluation import (accuracy0, accuracy1, accuracy2, estimate_track, evaluate_manifest)
from .model import ModelConfig, TempoModel, build_model, load_weights, save_weights
from .synthgen import ClickProfile, gen_click_track, gen_corpus
from .training import TrainConfig, split_dataset, train

__all__ = [
    "AudioClip", "ClickProfile", "DatasetManifest", "MelSpectrogram", "ModelConfig",
    "SpectrogramWindow", "TempoModel", "TrainConfig", "accuracy0", "accuracy1", "accuracy2",
    "autocorr_tempo", "build_model", "decode_wav", "estimate_track", "evaluate_manifest",
    "gen_click_track", "gen_corpus", "load_manifest", "load_weights", "mel_spectrogram",
    "onset_envelope", "resample", "save_weights", "split_dataset", "train",
]
