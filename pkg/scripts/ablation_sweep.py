#!/usr/bin/env python3
"""Sweep the frontend ablations on a synthetic corpus at desk scale.

Runs every preset (path structure x first-layer kernel size) for a fixed
number of epochs on the same synthetic tone corpus and prints a results
table. With the default 40 epochs the sweep takes roughly 15 minutes on one
CPU core; this is a plumbing/trend check, not a benchmark.

Usage: python scripts/ablation_sweep.py --out /tmp/ablation [--epochs 40]
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from sincasr.data import load_manifest, synth_corpus  # noqa: E402
from sincasr.model import PRESETS, ModelConfig, build_model  # noqa: E402
from sincasr.trainer import TrainConfig, evaluate_cer, train  # noqa: E402
from sincasr.vocab import load_vocab  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="working directory")
    parser.add_argument("--n", type=int, default=30)
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--presets", nargs="*", default=sorted(PRESETS),
                        help=f"subset to run (default all): {sorted(PRESETS)}")
    args = parser.parse_args()

    out = Path(args.out)
    manifest_path, vocab_path = synth_corpus(out / "corpus", seed=7,
                                             n_utterances=args.n)
    manifest = load_manifest(manifest_path)
    vocab = load_vocab(vocab_path)

    rows = []
    for preset in args.presets:
        config = ModelConfig.from_preset(preset, len(vocab), channels=8,
                                         lstm_layers=2, lstm_hidden=32,
                                         dropout=0.0)
        model = build_model(config, seed=args.seed)
        t0 = time.time()
        records = train(model, manifest, vocab,
                        TrainConfig(lr=args.lr, batch_size=8,
                                    max_epochs=args.epochs, seed=args.seed))
        cer = evaluate_cer(model, manifest, vocab)
        rows.append((preset, config.path_structure, config.first_kernel,
                     records[0].mean_loss, records[-1].mean_loss, cer,
                     time.time() - t0))
        print(f"done: {preset} ({rows[-1][-1]:.0f}s)")

    print(f"\n{'preset':<20} {'paths':<9} {'K1':>4} {'loss@1':>8} "
          f"{'loss@end':>9} {'CER':>7} {'sec':>6}")
    for preset, paths, k1, first, last, cer, sec in rows:
        print(f"{preset:<20} {paths:<9} {k1:>4d} {first:>8.3f} "
              f"{last:>9.3f} {cer:>7.4f} {sec:>6.0f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
