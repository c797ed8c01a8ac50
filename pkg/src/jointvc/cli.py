"""Command line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime fault.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import torch

from . import audio, config, content, data, evaluation, inference, plotting, toydata, training
from .audio import AudioError
from .config import ConfigError
from .content import ExtractorUnavailable, FeatureError
from .data import ManifestError
from .evaluation import MetricError
from .inference import ConversionError
from .losses import LossError, TrainingFault
from .models import ShapeError
from .training import CheckpointError

log = logging.getLogger("jointvc")

VALIDATION_ERRORS = (ConfigError, ManifestError, AudioError, FeatureError, ConversionError, MetricError,
                     LossError, CheckpointError, ShapeError)
RUNTIME_ERRORS = (TrainingFault, ExtractorUnavailable, OSError, RuntimeError)


class CommandError(Exception):
    def __init__(self, message, code=1):
        super().__init__(message)
        self.code = code


def _parse_set(items):
    """``a.b=value`` pairs into a nested dict; values parse as JSON when possible."""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return out


def effective_config(args) -> config.Config:
    overrides = _parse_set(args.set)
    cfg = config.load(args.config, args.profile, overrides)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.device is not None:
        cfg.device = args.device
    if args.temperature is not None:
        cfg.infer.temperature = args.temperature
    return cfg.validate()


def _echo_config(cfg: config.Config, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg.save(path)


# --- commands --------------------------------------------------------------

def cmd_split(args) -> int:
    entries = data.read_manifest(args.manifest)
    seed = 1234 if args.seed is None else args.seed
    out = data.split_entries(entries, seed=seed, test_ratio=args.test_ratio)
    data.write_manifest(out, args.out)
    n_test = sum(e.split == "test" for e in out)
    print(f"wrote {args.out}: {len(out) - n_test} train, {n_test} test")
    return 0


def cmd_prepare(args) -> int:
    cfg = effective_config(args)
    manifest = args.manifest or cfg.train.manifest
    if not manifest:
        raise ConfigError("no manifest given (--manifest or train.manifest)")
    entries = data.read_manifest(manifest)
    missing = [e.audio_path for e in entries if not e.audio_path.exists()]
    if missing:
        for p in missing:
            print(f"missing: {p}", file=sys.stderr)
        raise CommandError(f"{len(missing)} audio file(s) missing from {manifest}", 1)

    spec = content.ExtractorSpec.from_config(cfg.content)
    cache = content.FeatureCache(cfg.content.cache_dir)
    t0 = time.perf_counter()

    def work(e):
        w = audio.load_waveform(e.audio_path)
        too_short = len(w) < cfg.train.min_samples
        _, hit = data.make_utterance(e.utt_id, e.speaker_id, w, spec, cache)
        return e, hit, too_short

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        results = list(pool.map(work, entries))
    _echo_config(cfg, Path(cfg.content.cache_dir) / "config.json")

    hits = sum(hit for _, hit, _ in results)
    short = [str(e.audio_path) for e, _, s in results if s]
    print(f"prepared {len(results)} utterances in {time.perf_counter() - t0:.1f} s "
          f"({hits} cache hits, {len(results) - hits} extracted) -> {cfg.content.cache_dir}")
    print(f"too short for training (< {cfg.train.min_samples} samples): {len(short)}")
    for p in short:
        print(f"  {p}")
    return 0


def cmd_train(args) -> int:
    cfg = effective_config(args)
    manifest = args.manifest or cfg.train.manifest
    if not manifest:
        raise ConfigError("no manifest given (--manifest or train.manifest)")
    cfg.train.manifest = str(manifest)
    out_dir = Path(args.out_dir or cfg.train.out_dir)
    cfg.train.out_dir = str(out_dir)
    torch.manual_seed(cfg.train.seed)

    spec = content.ExtractorSpec.from_config(cfg.content)
    cache = content.FeatureCache(cfg.content.cache_dir)
    corpus = data.load_corpus(data.read_manifest(manifest), spec, cache,
                              cfg.train.min_samples, cfg.train.max_samples, split="train")
    if not corpus:
        raise CommandError("no training utterances within the length bounds", 1)

    trainer = training.Trainer(cfg)
    resume = args.checkpoint or (training.latest_checkpoint(out_dir) if args.resume else None)
    if resume:
        trainer.load_state_dict(training.read_checkpoint(resume, cfg.model))
        print(f"resumed from {resume} at step {trainer.step} (phase {trainer.phase.index})")
    _echo_config(cfg, out_dir / "config.json")

    until = args.steps if args.steps is not None else trainer.total_steps

    def progress(rec):
        if rec["step"] % args.log_every == 0:
            print(f"step {rec['step']} phase {rec['phase']} recon {rec['recon']:.3f} kl {rec['kl']:.3f} "
                  f"adv_g {rec['adv_g']:.3f} fm {rec['fm']:.3f} scl {rec['scl']:.3f} adv_d {rec['adv_d']:.3f}",
                  flush=True)

    trainer.fit(corpus, out_dir, until=until, callback=progress)
    records = training.read_log(out_dir / "train_log.jsonl")
    if records:
        fig = plotting.plot_training_log(records, out_dir / "train_curves.png", cfg.train.phase1_steps)
        print(f"figure: {fig}")
    print(f"finished at step {trainer.step}; latest checkpoint {training.latest_checkpoint(out_dir)}")
    return 0


def _model_from_checkpoint(args):
    ckpt = args.checkpoint
    if not ckpt:
        raise ConfigError("--checkpoint is required")
    cfg_override = effective_config(args) if args.config else None
    net_g, cfg = training.load_generator(ckpt, cfg_override, device=args.device or "cpu")
    if args.temperature is not None:
        cfg.infer.temperature = args.temperature
    if args.config is None and args.set:
        config.merge(cfg, _parse_set(args.set))
        cfg.validate()
    return net_g, cfg


def cmd_convert(args) -> int:
    net_g, cfg = _model_from_checkpoint(args)
    src = audio.load_waveform(args.source)
    ref = audio.load_waveform(args.reference)
    spec = content.ExtractorSpec.from_config(cfg.content)
    seed = cfg.train.seed if args.seed is None else args.seed
    out = inference.convert_voice(src, ref, net_g, spec, cfg.infer, seed=seed)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    audio.save_waveform(out, out_path)
    _echo_config(cfg, out_path.with_suffix(".config.json"))
    print(f"wrote {out_path}: {out.duration:.2f} s, {len(out)} samples, "
          f"{len(out) // audio.HOP} frames (source {len(src)} samples)")
    return 0


def cmd_evaluate(args) -> int:
    net_g, cfg = _model_from_checkpoint(args)
    spec = content.ExtractorSpec.from_config(cfg.content)
    pairs = evaluation.read_pairs(args.pairs)
    results = evaluation.evaluate_pairs(pairs, net_g.enc_spk, spec)
    out = Path(args.out)
    summary = evaluation.write_report(results, out)
    rows, _ = evaluation.read_report(out)
    fig = plotting.plot_report(rows, out.with_name(out.stem + "_metrics.png"))
    _echo_config(cfg, out.with_suffix(".config.json"))
    print(f"wrote {out}: {summary.n_pairs} pairs, {summary.n_failed} failed, {summary.n_unvoiced} unvoiced")
    print(f"figure: {fig}")
    return 0


def cmd_make_toy_corpus(args) -> int:
    seed = 0 if args.seed is None else args.seed
    manifest = toydata.make_corpus(args.out, args.speakers, args.train_per_speaker, args.test_per_speaker, seed)
    print(f"wrote {manifest}")
    return 0


def cmd_config_reference(args) -> int:
    doc = config.reference_doc()
    if args.out:
        Path(args.out).write_text(doc)
        print(f"wrote {args.out}")
    else:
        print(doc, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file merged over the profile defaults")
    common.add_argument("--profile", choices=sorted(config.PROFILES), default="paper")
    common.add_argument("--seed", type=int)
    common.add_argument("--checkpoint")
    common.add_argument("--temperature", type=float)
    common.add_argument("--device")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="jointvc", description="Voice conversion with a jointly trained speaker encoder.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("split", parents=[common], help="assign train/test per speaker (9:1)")
    s.add_argument("manifest")
    s.add_argument("out")
    s.add_argument("--test-ratio", type=float, default=0.1)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("prepare", parents=[common], help="extract and cache content features and spectrograms")
    s.add_argument("--manifest")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", parents=[common], help="run the two-phase training schedule")
    s.add_argument("--manifest")
    s.add_argument("--out-dir")
    s.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out-dir")
    s.add_argument("--steps", type=int, help="stop at this global step")
    s.add_argument("--log-every", type=int, default=50)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("convert", parents=[common], help="convert SOURCE to the voice of REFERENCE")
    s.add_argument("source")
    s.add_argument("reference")
    s.add_argument("out")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("evaluate", parents=[common], help="objective metrics for source|converted|reference triples")
    s.add_argument("pairs")
    s.add_argument("out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("make-toy-corpus", parents=[common], help="write a synthetic two-speaker corpus")
    s.add_argument("out")
    s.add_argument("--speakers", type=int, default=2)
    s.add_argument("--train-per-speaker", type=int, default=5)
    s.add_argument("--test-per-speaker", type=int, default=3)
    s.set_defaults(func=cmd_make_toy_corpus)

    s = sub.add_parser("config-reference", parents=[common], help="print every config key with its defaults")
    s.add_argument("--out")
    s.set_defaults(func=cmd_config_reference)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except TrainingFault as e:
        where = f" at step {e.step}" if e.step is not None else ""
        ids = f" (batch {e.batch_ids})" if e.batch_ids else ""
        print(f"training fault{where}: {e}{ids}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
