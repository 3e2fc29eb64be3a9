"""Command-line interface for the toolkit.

Subcommands cover the full loop: synthetic corpus generation, training,
scoring, evaluation, self-verification, and a frontend shape probe.

Exit codes: 0 success; 1 a verification check or a gated metric failed;
2 usage or configuration error; 3 unreadable or malformed input files.
"""

import argparse
import json
import os
import sys

import numpy as np

from .audio import generate_synthetic_corpus, load_wav, parse_protocol
from .config import PRESETS, TrainConfig, preset_config
from .errors import (CheckpointError, ConfigError, FormatError, InputError,
                     ParseError)
from .metrics import (ScoreRecord, compute_eer, compute_min_tdcf,
                      join_scores_with_keys, read_score_file,
                      write_score_file)
from .model import Detector, load_checkpoint, save_checkpoint
from .training import embed_arrays, score_arrays, train_on_corpus
from .verify import LEVELS, format_report, run_checks, write_report

CONFIG_ENV_VAR = "SINCSCAN_CONFIG"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_BAD_INPUT = 3

SCORE_DEFINITION = "bonafide logit minus spoof logit (higher = more genuine)"


def resolve_config(args) -> TrainConfig:
    """--config file if given, else $SINCSCAN_CONFIG, else the preset."""
    path = args.config or os.environ.get(CONFIG_ENV_VAR)
    if path:
        with open(path, encoding="utf-8") as fh:
            return TrainConfig.from_text(fh.read())
    return preset_config(args.preset)


def cmd_gen_synth(args) -> int:
    config = resolve_config(args)
    seed = config.seed if args.seed is None else args.seed
    records = generate_synthetic_corpus(seed, args.per_class, args.out_dir,
                                        n_samples=config.n_samples,
                                        sample_rate=config.sample_rate)
    print(f"wrote {len(records)} utterances and a protocol to {args.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = resolve_config(args)
    result = train_on_corpus(config, args.corpus_dir,
                             protocol_path=args.protocol,
                             stop_at_train_eer=args.stop_at_train_eer)
    for record in result.history:
        print(json.dumps(record))
    save_checkpoint(args.checkpoint, result.detector)
    print(f"saved checkpoint to {args.checkpoint}")
    return EXIT_OK


def _resolve_wav_paths(wav_list):
    """A directory scores every *.wav inside; a file lists one path per
    line (blank lines and # comments skipped)."""
    if os.path.isdir(wav_list):
        names = sorted(n for n in os.listdir(wav_list) if n.endswith(".wav"))
        return [os.path.join(wav_list, n) for n in names]
    paths = []
    with open(wav_list, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                paths.append(line)
    return paths


def _write_embeddings(path, utt_ids, vectors) -> None:
    """One `utt_id v0 v1 ...` line per utterance; repr keeps it lossless."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, row in zip(utt_ids, vectors):
            fh.write(utt_id + " "
                     + " ".join(repr(float(v)) for v in row) + "\n")


def cmd_score(args) -> int:
    detector = load_checkpoint(args.checkpoint)
    config = detector.config
    paths = _resolve_wav_paths(args.wav_list)
    utt_ids = [os.path.splitext(os.path.basename(p))[0] for p in paths]
    waves = np.empty((len(paths), config.n_samples))
    for row, path in enumerate(paths):
        waves[row] = load_wav(path, config.n_samples, config.sample_rate,
                              seed=config.seed)
    scores = score_arrays(detector, waves)
    records = [ScoreRecord(utt_id=u, label=None, score=float(s))
               for u, s in zip(utt_ids, scores)]
    write_score_file(args.scores, records, metadata={
        "score": SCORE_DEFINITION,
        "checkpoint": args.checkpoint,
        "n_utterances": len(records),
    })
    if args.embeddings:
        _write_embeddings(args.embeddings, utt_ids,
                          embed_arrays(detector, waves))
    print(f"scored {len(records)} utterances into {args.scores}")
    return EXIT_OK


def cmd_eval(args) -> int:
    records, _ = read_score_file(args.scores)
    keys = dict(parse_protocol(args.keys))
    joined = join_scores_with_keys(records, keys)
    eer, threshold = compute_eer(joined)
    min_tdcf = compute_min_tdcf(joined)
    print(f"eer {eer!r}")
    print(f"eer_threshold {threshold!r}")
    print(f"min_tdcf {min_tdcf!r}")
    if args.max_eer is not None and eer > args.max_eer:
        print(f"error: eer {eer!r} exceeds --max-eer {args.max_eer!r}",
              file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_checks(args.level)
    print(format_report(args.level, results))
    if args.report:
        write_report(args.report, args.level, results)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def cmd_shape_probe(args) -> int:
    config = resolve_config(args)
    front = Detector.create(config).frontend
    channels, freq_rows, time_cols = front.map_shape(config.n_samples)
    print(json.dumps({
        "n_filters": front.bank.n_filters,
        "frames_after_pool": config.n_samples // config.sinc_pool,
        "freq_rows": freq_rows,
        "time_cols": time_cols,
        "tokens": freq_rows * time_cols,
        "token_channels": channels,
    }))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sincscan",
        description="Raw-waveform anti-spoofing: train, score, and verify.")
    parser.add_argument("--preset", default="tiny", choices=sorted(PRESETS),
                        help="built-in configuration to start from")
    parser.add_argument("--config", default=None, metavar="PATH",
                        help="flat key-value config file; overrides the "
                             f"preset (also read from ${CONFIG_ENV_VAR})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a seeded synthetic corpus")
    p.add_argument("out_dir")
    p.add_argument("--per-class", type=int, default=32, metavar="N")
    p.add_argument("--seed", type=int, default=None,
                   help="corpus seed (default: the config seed)")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train on a corpus directory")
    p.add_argument("corpus_dir")
    p.add_argument("checkpoint")
    p.add_argument("--protocol", default=None, metavar="PATH",
                   help="protocol file (default: corpus_dir/protocol.txt)")
    p.add_argument("--stop-at-train-eer", type=float, default=None,
                   metavar="EER", help="stop once the train EER reaches this")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score WAV files with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("wav_list",
                   help="directory of WAVs, or a file listing one path per line")
    p.add_argument("scores", help="output score file")
    p.add_argument("--embeddings", default=None, metavar="PATH",
                   help="also write one embedding vector per utterance")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="EER and min t-DCF from scores plus keys")
    p.add_argument("scores")
    p.add_argument("keys", help="protocol or key file with utterance labels")
    p.add_argument("--max-eer", type=float, default=None, metavar="EER",
                   help="exit nonzero if the EER exceeds this bound")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the numeric self-check battery")
    p.add_argument("--level", default="quick", choices=LEVELS)
    p.add_argument("--report", default=None, metavar="PATH",
                   help="also write the report as JSON")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("shape-probe",
                       help="print the frontend map and token dimensions")
    p.set_defaults(func=cmd_shape_probe)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, FormatError, InputError, CheckpointError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
