"""``pwgan`` command line: gen-corpus, prepare, train, synth, bench, eval.

Any config key can be given as ``--key=value`` (dashes or underscores) after
the subcommand; file values from ``--config`` are overridden by flags.

Exit codes: 0 success, 2 usage, 3 data, 4 numeric failure. Failures print one
line ``error: <class>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import checkpoint, corpus, plotting
from .config import PRESETS, ConfigError, TrainConfig, config_from_dict, load_config, parse_overrides
from .dsp import WavFormatError, mel_spectrogram, read_wav, write_wav
from .losses import DegenerateReferenceError
from .train import (NumericError, ResumeMismatchError, format_record, latest_checkpoint, load_generator, read_metrics,
                    run_training)

log = logging.getLogger("pwgan")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_DATA):
        super().__init__(message)
        self.kind = kind
        self.code = code


# ------------------------------------------------------------------ helpers

def _split_overrides(extra: list[str]) -> dict[str, str]:
    """``--key=value`` or ``--key value`` tokens left over by argparse."""
    out: dict[str, str] = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or tok == "--":
            raise CliError("usage", f"unexpected argument {tok!r}", EXIT_USAGE)
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        elif i + 1 < len(extra) and not extra[i + 1].startswith("--"):
            i += 1
            value = extra[i]
        else:
            raise CliError("usage", f"flag --{key} needs a value", EXIT_USAGE)
        out[key.replace("-", "_")] = value
        i += 1
    return out


def _config(args, extra, default_preset: str = "desk", resume_from: Path | None = None) -> TrainConfig:
    """Preset (or a resumed checkpoint's config), then ``--config``, then flags."""
    preset = getattr(args, "preset", None) or default_preset
    if preset not in PRESETS:
        raise CliError("usage", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}", EXIT_USAGE)
    base = PRESETS[preset]
    if resume_from is not None:
        try:
            base = config_from_dict(checkpoint.load(resume_from)[1]["config"])
        except (checkpoint.CheckpointError, KeyError) as exc:
            raise CliError("checkpoint-invalid", f"{resume_from}: {exc}") from exc
    overrides = _split_overrides(extra)
    if "seed" in overrides and getattr(args, "seed", None) is not None:
        raise CliError("usage", "give --seed once", EXIT_USAGE)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if "total_steps" in overrides and "d_frozen_steps" not in overrides and resume_from is None:
        # a short run keeps the preset's frozen phase length, capped at the run length
        frozen = load_config(args.config, {}, base=base).d_frozen_steps
        total = parse_overrides({"total_steps": overrides["total_steps"]})["total_steps"]
        overrides["d_frozen_steps"] = str(min(frozen, total))
    return load_config(args.config, overrides, base=base)


def _emit(text: str, path: Path | None = None) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text if text.endswith("\n") else text + "\n")


def _load_generator(path):
    try:
        return load_generator(path)
    except FileNotFoundError as exc:
        raise CliError("checkpoint-not-found", str(exc)) from exc
    except checkpoint.CheckpointError as exc:
        raise CliError("checkpoint-invalid", str(exc)) from exc


def _split_holdout(utts, n_valid: int):
    if n_valid <= 0:
        return list(utts), []
    if n_valid >= len(utts):
        raise CliError("data", f"need more than {n_valid} clips to hold out {n_valid} for validation")
    return list(utts[:-n_valid]), list(utts[-n_valid:])


# ------------------------------------------------------------------ commands

def cmd_gen_corpus(args, extra) -> int:
    if extra:
        raise CliError("usage", "gen-corpus takes no config overrides", EXIT_USAGE)
    paths = corpus.generate_corpus(args.out, args.minutes, args.seed)
    _emit(f"clips={len(paths)}\nout={Path(args.out).resolve()}\n")
    return 0


def cmd_prepare(args, extra) -> int:
    cfg = _config(args, extra, "full")
    try:
        stats, utts = corpus.prepare(args.in_dir, args.out, cfg.mel)
    except FileNotFoundError as exc:
        raise CliError("empty-input", str(exc)) from exc
    frames = sum(u.n_frames for u in utts)
    _emit(f"clips={len(utts)}\nframes={frames}\nstats={Path(args.out).resolve() / corpus.STATS_FILE}\n")
    return 0


def _toy_data(out: Path) -> Path:
    data = out / "toy_data"
    if not (data / corpus.MANIFEST).is_file():
        corpus.generate_corpus(out / "toy_wav", minutes=0.5, seed=0)
        corpus.prepare(out / "toy_wav", data)
    return data


def cmd_train(args, extra) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resume = None
    if args.resume:
        resume = latest_checkpoint(out) if args.resume == "latest" else Path(args.resume)
        if resume is None or not Path(resume).is_file():
            raise CliError("checkpoint-not-found", f"no checkpoint to resume from: {args.resume}")
    cfg = _config(args, extra, resume_from=resume)
    if args.toy:
        data_dir = _toy_data(out)
    elif args.data:
        data_dir = Path(args.data)
    else:
        raise CliError("usage", "train needs --data DIR or --toy", EXIT_USAGE)
    try:
        stats, utts = corpus.load_prepared(data_dir, cfg.hop)
    except FileNotFoundError as exc:
        raise CliError("data-not-found", str(exc)) from exc
    train_set, valid = _split_holdout(utts, args.valid_clips)

    def progress(rec):
        if rec["step"] % args.log_every == 0:
            log.info("%s", format_record({k: rec[k] for k in ("step", "phase", "l_aux", "l_adv", "l_d")}))

    try:
        state = run_training(train_set, cfg, out, stats=stats, valid=valid, resume=resume, on_step=progress)
    except ResumeMismatchError as exc:
        raise CliError("checkpoint-mismatch", str(exc), EXIT_USAGE) from exc
    records = read_metrics(out / "metrics.txt")
    validation = read_metrics(out / "validation.txt") if (out / "validation.txt").exists() else []
    summary = {"steps": state.step, "checkpoint": str(latest_checkpoint(out)),
               "final_l_aux": records[-1]["l_aux"] if records else float("nan")}
    if validation:
        summary["val_aux_start"] = validation[0]["val_aux"]
        summary["val_aux_final"] = validation[-1]["val_aux"]
    if records:
        summary["figure"] = str(plotting.plot_training(records, validation, out / "training.png"))
    _emit("".join(f"{k}={v}\n" for k, v in summary.items()), out / "train_report.txt")
    return 0


def cmd_synth(args, extra) -> int:
    if extra:
        raise CliError("usage", "synth takes no config overrides", EXIT_USAGE)
    gen, cfg, stats = _load_generator(args.checkpoint)
    from .synthbench import synthesize

    reference = None
    if args.wav:
        if stats is None:
            raise CliError("checkpoint-invalid", "checkpoint has no feature statistics")
        reference = read_wav(args.wav).samples
        mel = mel_spectrogram(reference, cfg.mel, stats)
        reference = reference[: mel.shape[1] * cfg.hop]
    elif args.mel:
        mel = np.load(args.mel)
    else:
        raise CliError("usage", "synth needs --wav or --mel", EXIT_USAGE)
    if mel.shape[0] != cfg.n_mels:
        raise CliError("checkpoint-mismatch", f"mel has {mel.shape[0]} bands, checkpoint expects {cfg.n_mels}")
    clip = synthesize(gen, mel, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_wav(out, clip)
    lines = f"out={out.resolve()}\nn_samples={len(clip)}\nframes={mel.shape[1]}\nseed={args.seed}\n"
    if reference is not None:
        fig = plotting.plot_spectrograms(reference, clip.samples, out.with_suffix(".png"))
        lines += f"figure={fig}\n"
    _emit(lines)
    return 0


def cmd_bench(args, extra) -> int:
    from .models import Generator
    from .synthbench import benchmark

    if args.checkpoint:
        if extra:
            raise CliError("usage", "config overrides apply to --preset benchmarks only", EXIT_USAGE)
        gen, _, _ = _load_generator(args.checkpoint)
    else:
        cfg = _config(args, extra, "full")
        gen = Generator(cfg.generator, seed=cfg.seed)
    if args.seconds < 1:
        raise CliError("usage", "--seconds must be at least 1", EXIT_USAGE)
    report = benchmark(gen, args.seconds, args.trials, args.seed or 0)
    text = report.to_text() + f"record={report.to_record()}\n"
    if args.out:
        out = Path(args.out)
        fig = plotting.plot_bench([0.0, report.audio_seconds_generated, 2 * report.audio_seconds_generated],
                                  [0.0, report.wall_seconds, report.wall_seconds * report.linearity_ratio],
                                  out / "bench.png")
        text += f"figure={fig}\n"
        _emit(text, out / "bench.txt")
    else:
        _emit(text)
    return 0


def cmd_eval(args, extra) -> int:
    if extra:
        raise CliError("usage", "eval takes no config overrides", EXIT_USAGE)
    from .synthbench import evaluate

    gen, cfg, stats = _load_generator(args.checkpoint)
    try:
        data_stats, utts = corpus.load_prepared(args.data, cfg.hop)
    except FileNotFoundError as exc:
        raise CliError("data-not-found", str(exc)) from exc
    if args.last:
        utts = utts[-args.last:]
    rows, agg = evaluate(gen, utts, cfg, args.seed)
    text = "".join(format_record(r) + "\n" for r in rows + [agg])
    if args.out:
        out = Path(args.out)
        fig = plotting.plot_eval(rows, out / "eval.png")
        _emit(text + f"figure={fig}\n", out / "eval.txt")
    else:
        _emit(text)
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pwgan", description=__doc__.split("\n")[0],
                                epilog="Config keys are accepted as --key=value after the subcommand.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="write a seeded synthetic WAV corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--minutes", type=float, default=5.0)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_corpus)

    pr = sub.add_parser("prepare", help="mel features, stats.bin and manifest for a WAV directory")
    pr.add_argument("--in", dest="in_dir", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--config")
    pr.set_defaults(func=cmd_prepare)

    t = sub.add_parser("train", help="two-phase adversarial training")
    t.add_argument("--data", help="prepared dataset directory")
    t.add_argument("--toy", action="store_true", help="use a small bundled synthetic corpus")
    t.add_argument("--out", required=True, help="checkpoint and metrics directory")
    t.add_argument("--config")
    t.add_argument("--preset", default="desk", help="desk (default) or full")
    t.add_argument("--resume", help="checkpoint path, or 'latest' in --out")
    t.add_argument("--valid-clips", type=int, default=6, help="last N manifest clips held out")
    t.add_argument("--log-every", type=int, default=50)
    t.set_defaults(func=cmd_train, seed=None)

    s = sub.add_parser("synth", help="waveform from a checkpoint and mel features or a WAV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mel", help=".npy [n_mels, frames], already normalised")
    s.add_argument("--wav", help="analysis-synthesis of this WAV")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("bench", help="real-time factor and parameter counts")
    b.add_argument("--checkpoint")
    b.add_argument("--preset", default="full")
    b.add_argument("--config")
    b.add_argument("--seconds", type=float, default=1.0)
    b.add_argument("--trials", type=int, default=3)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--out", help="directory for bench.txt and bench.png")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("eval", help="multi-resolution STFT loss of analysis-synthesis")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--last", type=int, default=0, help="only the last N clips (the held-out split)")
    e.add_argument("--seed", type=int, default=1234)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)
    return p


def _thread_limit():
    raw = os.environ.get("PWG_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise CliError("usage", f"PWG_THREADS must be an integer, got {raw!r}", EXIT_USAGE) from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, n))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with _thread_limit():
            return args.func(args, extra)
    except CliError as exc:
        kind, code, msg = exc.kind, exc.code, str(exc)
    except ConfigError as exc:
        kind, code, msg = "config", EXIT_USAGE, str(exc)
    except WavFormatError as exc:
        kind, code, msg = "bad-wav", EXIT_DATA, str(exc)
    except checkpoint.CheckpointError as exc:
        kind, code, msg = "checkpoint-invalid", EXIT_DATA, str(exc)
    except (NumericError, DegenerateReferenceError, FloatingPointError) as exc:
        kind, code, msg = "numeric", EXIT_NUMERIC, str(exc)
    except FileNotFoundError as exc:
        kind, code, msg = "file-not-found", EXIT_DATA, str(exc)
    except ValueError as exc:
        kind, code, msg = "data", EXIT_DATA, str(exc)
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
