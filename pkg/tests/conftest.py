import numpy as np
import pytest

from tempogauge.audio_io import AudioClip
from tempogauge.dsp import mel_spectrogram
from tempogauge.model import ModelConfig, build_model
from tempogauge.synthgen import ClickProfile, gen_click_track


@pytest.fixture(scope="session")
def click120():
    clip, bpm = gen_click_track(ClickProfile(bpm=120.0, duration_seconds=30.0, seed=7))
    return clip


@pytest.fixture(scope="session")
def click120_spec(click120):
    return mel_spectrogram(click120)


@pytest.fixture
def rng():
    return np.random.default_rng(20240)


@pytest.fixture(scope="session")
def tiny_config():
    """Same input/output contract as the full model, but small enough for unit tests."""
    return ModelConfig(rnn_layers=1, rnn_units_per_direction=3, dense_widths=(16, 8))


@pytest.fixture
def tiny_model(tiny_config):
    return build_model(tiny_config, seed=3)


def noise_clip(n, seed=0, rate=11025):
    return AudioClip(np.random.default_rng(seed).uniform(-0.5, 0.5, n), rate)


def fixed_tempo_model(config, bpm, seed=0):
    """A model that predicts ``bpm`` for every input: zero output weights and
    a dominant bias on one class."""
    model = build_model(config, seed=seed)
    out = model.network["output"]
    out.params["W"][:] = 0
    out.params["b"][:] = 0
    out.params["b"][int(round(bpm)) - config.bpm_lo] = 10.0
    return model
