"""Command line entry point tying the modules into reproducible experiments.

Subcommands: synth-data, build-vocab, train, eval, decode, inspect-filters,
grad-check. Training runs are described by a single JSON config file with
`model`, `train`, `data`, and `output_dir` sections (flags override config
values); every path inside the config resolves relative to the config file, so
an experiment directory can be moved wholesale. Exit codes: 0 success, 1
runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import verify
from .ctc import greedy_decode
from .data import load_manifest, read_wav, synth_corpus
from .model import ModelConfig, build_model
from .sinc import write_filter_csv
from .trainer import TrainConfig, evaluate_cer, load_checkpoint, train
from .vocab import build_vocab, detokenize, load_vocab, save_vocab

_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"checkpoint_dir"}
_MODEL_OVERRIDE_KEYS = {f.name for f in dataclasses.fields(ModelConfig)} - {
    "vocab_size", "preset", "path_structure",
}
_DATA_KEYS = {"train_manifest", "dev_manifest", "vocab"}


@dataclasses.dataclass
class RunConfig:
    """A parsed experiment config with all paths resolved."""

    preset: str
    model_overrides: dict
    train: TrainConfig
    train_manifest: Path
    dev_manifest: Path | None
    vocab: Path
    output_dir: Path


def _reject_unknown(section: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ValueError(f"unknown keys {unknown} in {where}; "
                         f"allowed: {sorted(allowed)}")


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    _reject_unknown(doc, {"model", "train", "data", "output_dir"}, str(path))
    for section in ("model", "data"):
        if section not in doc:
            raise ValueError(f"{path}: missing required section {section!r}")
    if "output_dir" not in doc:
        raise ValueError(f"{path}: missing required key 'output_dir'")

    model = dict(doc["model"])
    if "preset" not in model:
        raise ValueError(f"{path}: model section needs a 'preset'")
    preset = model.pop("preset")
    _reject_unknown(model, _MODEL_OVERRIDE_KEYS, f"{path} model section")

    train_section = dict(doc.get("train", {}))
    _reject_unknown(train_section, _TRAIN_KEYS, f"{path} train section")
    train_config = TrainConfig(**train_section)

    data = dict(doc["data"])
    _reject_unknown(data, _DATA_KEYS, f"{path} data section")
    for key in ("train_manifest", "vocab"):
        if key not in data:
            raise ValueError(f"{path}: data section needs {key!r}")

    base = path.parent
    dev = data.get("dev_manifest")
    return RunConfig(
        preset=preset,
        model_overrides=model,
        train=train_config,
        train_manifest=base / data["train_manifest"],
        dev_manifest=base / dev if dev is not None else None,
        vocab=base / data["vocab"],
        output_dir=base / doc["output_dir"],
    )


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth_data(args) -> int:
    manifest_path, vocab_path = synth_corpus(args.out, seed=args.seed,
                                             n_utterances=args.n)
    print(f"wrote {manifest_path}")
    print(f"wrote {vocab_path}")
    return 0


def _cmd_build_vocab(args) -> int:
    manifest = load_manifest(args.manifest)
    vocab = build_vocab(u.transcript for u in manifest)
    save_vocab(vocab, args.out)
    print(f"wrote {args.out} ({len(vocab)} tokens, digest {vocab.digest()[:12]})")
    return 0


def _cmd_train(args) -> int:
    run = load_run_config(args.config)
    for name in ("lr", "batch_size", "max_epochs", "seed"):
        value = getattr(args, name)
        if value is not None:
            run = dataclasses.replace(
                run, train=dataclasses.replace(run.train, **{name: value}))
    vocab = load_vocab(run.vocab)
    manifest = load_manifest(run.train_manifest)
    dev = load_manifest(run.dev_manifest) if run.dev_manifest else None
    config = ModelConfig.from_preset(run.preset, len(vocab),
                                     **run.model_overrides)
    model = build_model(config, seed=run.train.seed)
    run.output_dir.mkdir(parents=True, exist_ok=True)
    train_config = dataclasses.replace(
        run.train, checkpoint_dir=str(run.output_dir / "checkpoints"))
    records = train(model, manifest, vocab, train_config, dev_manifest=dev,
                    log_path=run.output_dir / "train_log.csv")
    for r in records:
        cer = "-" if r.dev_cer is None else f"{r.dev_cer:.4f}"
        print(f"epoch {r.epoch}: loss {r.mean_loss:.4f} dev_cer {cer} "
              f"({r.seconds:.1f}s)")
    return 0


def _cmd_eval(args) -> int:
    model, vocab, _, _ = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    cer = evaluate_cer(model, manifest, vocab, batch_size=args.batch_size)
    print(f"CER {cer:.4f}")
    return 0


def _cmd_decode(args) -> int:
    model, vocab, _, _ = load_checkpoint(args.checkpoint)
    samples, rate = read_wav(args.wav)
    if rate != model.config.sample_rate:
        raise ValueError(f"{args.wav}: sample rate {rate} does not match the "
                         f"model's {model.config.sample_rate}")
    waves = samples[np.newaxis, np.newaxis, :].astype(model.dtype)
    log_probs, frame_lengths = model.forward(waves, [samples.shape[0]],
                                             train=False)
    ids = greedy_decode(log_probs, frame_lengths)[0]
    print(detokenize(ids, vocab))
    return 0


def _cmd_inspect_filters(args) -> int:
    model, _, _, _ = load_checkpoint(args.checkpoint)
    kinds = model.config.path_kinds()
    if "sinc" not in kinds:
        raise ValueError(f"model preset {model.config.preset!r} has no sinc "
                         "path; nothing to inspect")
    block = model.paths[kinds.index("sinc")].blocks[0]
    write_filter_csv(block.params, block.layer_config, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_grad_check(args) -> int:
    names = args.checks if args.checks else None
    results = verify.run_suite(range(args.seeds), names=names)
    for r in results:
        print(r.line())
    if not verify.all_passed(results):
        print(f"{sum(not r.report.passed for r in results)} check(s) FAILED",
              file=sys.stderr)
        return 1
    print(f"all {len(results)} checks passed")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sincasr",
        description="Speech recognition with learnable sinc filterbanks: "
                    "data synthesis, training, evaluation, and decoding.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic tone corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=30, help="number of utterances")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("build-vocab", help="derive a vocabulary from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--lr", type=float, default=None, help="override config lr")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="report CER of a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=8)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("decode", help="print the greedy transcription of a wav")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("inspect-filters",
                       help="dump learned filter responses to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_inspect_filters)

    p = sub.add_parser("grad-check", help="run the gradient verification suite")
    p.add_argument("--seeds", type=int, default=3,
                   help="number of seeds per check")
    p.add_argument("--checks", nargs="*", default=None,
                   help=f"subset to run (default all): {sorted(verify.ALL_CHECKS)}")
    p.set_defaults(func=_cmd_grad_check)

    return parser


def run_cli(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
