"""Command-line entry point.

Exit codes: 0 success, 1 user/input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USER)


def _seed(value):
    if value is not None:
        return value
    env = os.environ.get("TEMPOGAUGE_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UserError(f"TEMPOGAUGE_SEED must be an integer, got {env!r}") from None


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UserError(f"no such file: {p}")
    return p


def cmd_gen(args):
    from .synthgen import gen_corpus
    manifest = gen_corpus(args.count, args.bpm_min, args.bpm_max, args.out, _seed(args.seed),
                          jobs=args.jobs)
    print(f"wrote {len(manifest)} tracks and {Path(args.out) / 'manifest.jsonl'}")


def cmd_train(args):
    from .audio_io import load_manifest
    from .model import build_model, save_weights
    from .training import TrainConfig, split_dataset, train

    manifest = load_manifest(_existing(args.manifest))
    config = TrainConfig.from_json(_existing(args.config)) if args.config else TrainConfig()
    if args.seed is not None or "TEMPOGAUGE_SEED" in os.environ:
        config = TrainConfig.from_dict({**vars(config), "seed": _seed(args.seed)})
    if any(e.split == "unassigned" for e in manifest):
        manifest = split_dataset(manifest, config.seed)
    model = build_model(seed=config.seed, report=lambda s: print(s, file=sys.stderr))
    best, history = train(manifest, model, config, deterministic=args.deterministic,
                          jobs=args.jobs)
    out = Path(args.out)
    save_weights(best, out)
    history_path = out.with_name(out.stem + ".history.json")
    history_path.write_text(history.to_json(), encoding="utf-8")
    print(f"best epoch {history.best_epoch}; wrote {out} and {history_path}")


def cmd_estimate(args):
    from .audio_io import load_audio
    from .evaluation import estimate_track
    from .model import load_weights

    model = load_weights(_existing(args.model))
    results = []
    for path in args.audio:
        est = estimate_track(model, load_audio(_existing(path)))
        if args.json:
            results.append({"path": path, "bpm": est.bpm, "n_windows": est.n_windows,
                            "bpm_lo": est.distribution.bpm_lo,
                            "distribution": [round(float(p), 8) for p in est.distribution.probs]})
        else:
            print(f"{path}\t{est.bpm:.1f}")
    if args.json:
        print(json.dumps(results, indent=1))


def cmd_evaluate(args):
    from .audio_io import load_manifest
    from .evaluation import evaluate_manifest
    from .model import load_weights

    model = load_weights(_existing(args.model))
    manifest = load_manifest(_existing(args.manifest))
    split = None if args.split == "all" else args.split
    report = evaluate_manifest(model, manifest, split, jobs=args.jobs, model_path=args.model)
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    sys.stdout.write(report.table())
    if report.errors:
        print(f"{report.errors} track(s) failed; see report details", file=sys.stderr)


def cmd_spectrogram(args):
    from .audio_io import load_audio
    from .dsp import mel_spectrogram, spectrogram_to_csv

    spec = mel_spectrogram(load_audio(_existing(args.audio)))
    Path(args.out).write_text(spectrogram_to_csv(spec), encoding="utf-8")
    print(f"wrote {spec.n_bands}x{spec.n_frames} spectrogram to {args.out}")


def cmd_oracle(args):
    from .audio_io import load_audio
    from .dsp import oracle_tempo

    for path in args.audio:
        bpm = oracle_tempo(load_audio(_existing(path)))
        print(f"{bpm:.1f}" if len(args.audio) == 1 else f"{path}\t{bpm:.1f}")


def cmd_gradcheck(args):
    from .nn import standard_suite

    ok = True
    for name, report in standard_suite(max_entries=args.max_entries).items():
        status = "PASS" if report.passed else "FAIL"
        print(f"{status} {name:<20s} max rel err {report.max_error:.2e}"
              + (f" (skipped: {', '.join(report.skipped)})" if report.skipped else ""))
        ok &= report.passed
    return EXIT_OK if ok else EXIT_USER


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tempogauge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic click-track corpus")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--bpm-min", type=float, default=60.0)
    g.add_argument("--bpm-max", type=float, default=180.0)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--jobs", type=int, default=None)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model from a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--deterministic", action="store_true",
                   help="single-threaded, bit-reproducible run")
    t.add_argument("--jobs", type=int, default=1,
                   help="threads for spectrogram preparation (forced to 1 with --deterministic)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("estimate", help="estimate the tempo of audio files")
    e.add_argument("--model", required=True)
    e.add_argument("audio", nargs="+")
    e.add_argument("--json", action="store_true", help="emit the full class distribution")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("evaluate", help="Accuracy0/1/2 report over a manifest")
    v.add_argument("--model", required=True)
    v.add_argument("--manifest", required=True)
    v.add_argument("--split", default="test", choices=["train", "val", "test", "unassigned", "all"])
    v.add_argument("--report")
    v.add_argument("--jobs", type=int, default=None)
    v.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("spectrogram", help="dump a Mel spectrogram as CSV")
    s.add_argument("audio")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrogram)

    o = sub.add_parser("oracle", help="autocorrelation tempo, no model needed")
    o.add_argument("audio", nargs="+")
    o.set_defaults(func=cmd_oracle)

    c = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    c.add_argument("--max-entries", type=int, default=None)
    c.set_defaults(func=cmd_gradcheck)
    return p


def run(argv=None) -> int:
    from .audio_io import ManifestError, WavFormatError
    from .model import WeightsError
    from .training import ConfigError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        code = args.func(args)
    except (UserError, ManifestError, WavFormatError, WeightsError, ConfigError,
            FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK if code is None else code


def main() -> None:
    sys.exit(run())
