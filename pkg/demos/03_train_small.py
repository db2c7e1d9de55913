"""Train the recurrent classifier on a small synthetic corpus.

A few epochs on 60 tracks take a couple of minutes on one core; the
validation loss should fall well below its starting value of ~ln(256).

Run: python3 demos/03_train_small.py [out_dir]
"""
# %% corpus: 60 click tracks between 60 and 180 bpm, split 80/20
import logging
import sys
import tempfile
from pathlib import Path

from tempogauge.model import build_model, save_weights
from tempogauge.synthgen import gen_corpus
from tempogauge.training import TrainConfig, split_dataset, train

logging.basicConfig(level=logging.INFO, format="%(message)s")
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="tempogauge-"))
manifest = split_dataset(gen_corpus(60, 60, 180, out / "corpus", seed=1), seed=0)
print({s: len(manifest.select(s)) for s in ("train", "val")})

# %% the full architecture; the build step reports its parameter count
model = build_model(seed=0, report=print)

# %% momentum SGD (lr 0.001, momentum 0.9, clip 5) with early stopping on validation loss
config = TrainConfig(max_epochs=8, early_stop_patience=4, val_accuracy_every=4)
best, history = train(manifest, model, config)
for r in history.records:
    print(f"epoch {r.epoch}: train {r.train_loss:.3f}  val {r.val_loss:.3f}")
print("best epoch:", history.best_epoch)

# %% keep the weights for demos/04_evaluate.py
save_weights(best, out / "model.tgw")
print("wrote", out / "model.tgw")
