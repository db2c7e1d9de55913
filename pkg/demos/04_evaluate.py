"""Score a trained model on fresh tracks and inspect octave errors.

Run: python3 demos/04_evaluate.py path/to/model.tgw
"""
# %% a held-out corpus the model has never seen
import sys
import tempfile

from tempogauge.audio_io import load_audio
from tempogauge.evaluation import estimate_track, evaluate_manifest
from tempogauge.model import load_weights
from tempogauge.synthgen import gen_corpus

if len(sys.argv) != 2:
    sys.exit(__doc__.strip().splitlines()[-1])
model = load_weights(sys.argv[1])
held_out = gen_corpus(20, 60, 180, tempfile.mkdtemp(prefix="tempogauge-eval-"), seed=99,
                      dataset="heldout")

# %% per-dataset table: Accuracy0 (exact after rounding), Accuracy1 (+/-4 %), Accuracy2 (octaves)
report = evaluate_manifest(model, held_out, split=None)
print(report.table())

# %% which tracks missed, and by which octave factor
for d in report.details:
    if not d.acc1:
        print(f"{d.path}: gt {d.gt_bpm:.1f} est {d.est_bpm:.1f} factor {d.octave_factor}")

# %% one track in detail: windows of 256 frames every 128 frames, probabilities averaged
entry = held_out.entries[0]
est = estimate_track(model, load_audio(held_out.resolve(entry)))
top = est.distribution.probs.argsort()[::-1][:3]
print(f"{entry.path}: {est.n_windows} windows, top classes "
      + ", ".join(f"{30 + i} bpm ({est.distribution.probs[i]:.2f})" for i in top))
