"""Command-line entry point: ``bgmgen {encode,decode,train,generate,evaluate}``.

Exit codes: 0 success, 2 input error, 3 training diverged, 4 evaluation
input error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, load_meta, save_checkpoint
from .conditioning import (
    ManifestError,
    TensorFormatError,
    load_condition,
    read_manifest,
    read_tensor,
    write_tensor,
)
from .config import ConfigError, RunConfig, load_config
from .denoiser import DenoiserNet
from .diffusion import generate
from .metrics import evaluate_corpus
from .midi import MidiParseError, read_midi, write_midi
from .pianoroll import STEPS_PER_BAR, events_to_roll, roll_to_events
from .training import TrainingDiverged, train

log = logging.getLogger("bgmgen")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIVERGED = 3
EXIT_EVAL_INPUT = 4

INPUT_ERRORS = (MidiParseError, TensorFormatError, ManifestError, ConfigError, CheckpointError,
                FileNotFoundError, ValueError)


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def item_seed(seed: int, item_id: str) -> int:
    """Per-item sampling seed; independent of item order and thread count."""
    digest = hashlib.sha256(f"{seed}:{item_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def midi_segment(path, bar_offset: int = 0, steps: int = 128, pitches: int = 128) -> np.ndarray:
    """Roll for the 8-bar window of a MIDI file starting at ``bar_offset``."""
    return events_to_roll(read_midi(path).notes, bar_offset * STEPS_PER_BAR, steps, pitches)


def _out_dir(args, cfg: RunConfig | None = None) -> Path:
    out = args.out or (cfg.out_dir if cfg is not None else None)
    if out is None:
        raise CommandError("no output directory: pass --out or set out_dir", EXIT_INPUT)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> RunConfig:
    return load_config(args.config, seed=args.seed)


def cmd_encode(args) -> int:
    roll = midi_segment(args.midi, args.start_bar)
    write_tensor(roll.astype(np.float64), args.out)
    return EXIT_OK


def cmd_decode(args) -> int:
    data = read_tensor(args.tensor)
    if data.ndim != 3 or data.shape[0] != 2:
        raise CommandError(f"expected a (2, T, P) roll tensor, got shape {data.shape}", EXIT_INPUT)
    events, repairs = roll_to_events((data > 0.5).astype(np.uint8))
    if repairs:
        log.warning("repaired %d sustain runs without onset", repairs)
    write_midi(args.out, events)
    return EXIT_OK


def _training_corpus(cfg: RunConfig):
    if cfg.manifest is None:
        raise CommandError("config has no manifest", EXIT_INPUT)
    arch = cfg.architecture()
    corpus = []
    for item in read_manifest(cfg.manifest):
        roll = midi_segment(item.midi_path, item.bar_offset, arch.time_steps, arch.pitch_bins)
        corpus.append((roll, load_condition(item) if cfg.conditional else None))
    if not corpus:
        raise CommandError("manifest is empty", EXIT_INPUT)
    return corpus


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    corpus = _training_corpus(cfg)
    sched = cfg.schedule()
    net = DenoiserNet(cfg.architecture(), seed=cfg.seed)
    ckpt = cfg.checkpoint or out / "checkpoint.dbgk"
    meta = {"conditional": cfg.conditional}
    (out / "config.resolved").write_text(cfg.to_text(), encoding="utf-8")
    save_checkpoint(ckpt, net, sched, meta)

    def on_step(step, net, loss):
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(ckpt, net, sched, meta)

    losses = []
    status = EXIT_OK
    try:
        net, losses = train(net, corpus, cfg.train_config(), sched, callback=on_step)
        save_checkpoint(ckpt, net, sched, meta)
    except TrainingDiverged as exc:
        losses = exc.losses
        print(f"error: {exc}; keeping the last good checkpoint", file=sys.stderr)
        status = EXIT_DIVERGED
    with open(out / "loss.log", "w", encoding="utf-8") as fh:
        for step, loss in enumerate(losses, 1):
            fh.write(f"{step} {loss!r}\n")
    return status


def _generate_one(net, sched, item, seed: int, conditional: bool, out: Path) -> None:
    cond = load_condition(item) if conditional else None
    roll = generate(net, cond, sched, seed=item_seed(seed, item.id))
    events, _ = roll_to_events(roll)
    write_midi(out / f"{item.id}.mid", events)


def cmd_generate(args) -> int:
    cfg = _config(args) if args.config else None
    checkpoint = args.checkpoint or (cfg.checkpoint if cfg else None)
    manifest = args.manifest or (cfg.manifest if cfg else None)
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else None)
    if checkpoint is None or manifest is None or seed is None:
        raise CommandError("generate needs a checkpoint, a manifest and a seed", EXIT_INPUT)
    out = _out_dir(args, cfg)
    net, sched = load_checkpoint(checkpoint)
    conditional = load_meta(checkpoint).get("conditional", True)
    items = read_manifest(manifest)

    def run(item):
        try:
            _generate_one(net, sched, item, seed, conditional, out)
            return None
        except Exception as exc:  # noqa: BLE001 - one bad item must not stop the run
            return f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        errors = list(pool.map(run, items))
    failures = [{"id": it.id, "error": err} for it, err in zip(items, errors) if err]
    for f in failures:
        print(f"error: item {f['id']}: {f['error']}", file=sys.stderr)
    summary = {"seed": seed, "generated": [it.id for it, err in zip(items, errors) if not err],
               "failed": failures}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    manifest = args.manifest or cfg.manifest
    if manifest is None:
        raise CommandError("evaluate needs a manifest", EXIT_INPUT)
    out = _out_dir(args, cfg)
    arch = cfg.architecture()
    items = read_manifest(manifest)
    truth = {it.id: midi_segment(it.midi_path, it.bar_offset, arch.time_steps, arch.pitch_bins)
             for it in items}
    gen_dir = Path(args.generated)
    files = sorted(gen_dir.glob("*.mid")) if gen_dir.is_dir() else []
    if not files:
        raise CommandError(f"no generated .mid files in {gen_dir}", EXIT_EVAL_INPUT)
    generated = {}
    for f in files:
        if f.stem not in truth:
            raise CommandError(f"generated file {f.name} has no manifest entry", EXIT_EVAL_INPUT)
        try:
            generated[f.stem] = events_to_roll(read_midi(f).notes, 0, arch.time_steps, arch.pitch_bins)
        except MidiParseError as exc:
            raise CommandError(f"{f}: {exc}", EXIT_EVAL_INPUT) from None
    retrieval = cfg.retrieval()
    if len(truth) < retrieval.m:
        raise CommandError(f"ground-truth pool has {len(truth)} items, fewer than M={retrieval.m}",
                           EXIT_EVAL_INPUT)
    report = evaluate_corpus(generated, truth, retrieval, (cfg.si_lag_min, cfg.si_lag_max),
                             cfg.diversity_seed)
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "summary.json").write_text(report.to_json(), encoding="utf-8")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bgmgen", description="Video-conditioned symbolic music diffusion toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="MIDI file -> roll tensor file")
    p.add_argument("midi")
    p.add_argument("--out", required=True)
    p.add_argument("--start-bar", type=int, default=0)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="roll tensor file -> MIDI file")
    p.add_argument("tensor")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("train", help="train a denoiser from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample one MIDI file per manifest item")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated MIDI against the manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--manifest")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
