"""The autocorrelation reference estimator, and how its errors look.

Run: python3 demos/02_oracle.py
"""
# %% estimate a handful of tracks with different metres
from tempogauge.dsp import oracle_tempo
from tempogauge.evaluation import accuracy1, accuracy2
from tempogauge.synthgen import ClickProfile, gen_click_track

profiles = [
    ClickProfile(bpm=72.0, seed=1),
    ClickProfile(bpm=118.3, subdivision=2, seed=2),
    ClickProfile(bpm=96.0, subdivision=3, accent_period=6, seed=3),   # 6/8 feel
    ClickProfile(bpm=160.5, accent_period=3, noise_snr_db=10.0, seed=4),
]
for p in profiles:
    clip, gt = gen_click_track(p)
    est = oracle_tempo(clip)
    hit2, factor = accuracy2(est, gt)
    print(f"gt {gt:6.1f}  est {est:6.1f}  acc1 {accuracy1(est, gt)!s:5}  "
          f"acc2 {hit2!s:5} factor {factor}")

# %% the octave-tolerant metric accepts 2x, 3x, 1/2 and 1/3 of the truth
for est, gt in [(145, 290), (140, 70), (150, 100)]:
    print(f"est {est} vs gt {gt}: accuracy1={accuracy1(est, gt)}, accuracy2={accuracy2(est, gt)}")
