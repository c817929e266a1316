#!/usr/bin/env python3
"""Generate a cipher corpus and run the single- vs multi-positive comparison.

Reproduces the headline experiment end to end: a 6-language corpus with
one held-out language, both training arms over matched seeds, and a
JSON report. The defaults match the shipped recipe; expect roughly two
to three minutes on one core.
"""

import argparse
import json
import os
import sys

from multipos import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/compare", help="artifact directory")
    ap.add_argument("--concepts", type=int, default=500)
    ap.add_argument("--langs", type=int, default=6)
    ap.add_argument("--heldout", type=int, default=1)
    ap.add_argument("--fresh-rate", type=float, default=0.5)
    ap.add_argument("--corpus-seed", type=int, default=7)
    ap.add_argument("--seeds", type=int, default=5, help="training seeds per arm")
    ap.add_argument("--seed", type=int, default=0, help="first training seed")
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--batch-size", type=int, default=None)
    ap.add_argument("--k", type=int, default=None)
    ap.add_argument("--lr", type=float, default=None)
    ap.add_argument("--fixed-pairs", action="store_true",
                    help="freeze the single-arm pairing instead of redrawing per epoch")
    args = ap.parse_args()

    corpus_dir = os.path.join(args.out_dir, "corpus")
    outcome = cli.run([
        "synth",
        "--concepts", str(args.concepts),
        "--langs", str(args.langs),
        "--heldout", str(args.heldout),
        "--fresh-rate", str(args.fresh_rate),
        "--seed", str(args.corpus_seed),
        "--out", corpus_dir,
    ])
    if outcome.exit_code != 0:
        return outcome.exit_code

    report_path = os.path.join(args.out_dir, "report.json")
    cmd = [
        "compare",
        "--data", os.path.join(corpus_dir, "groups.jsonl"),
        "--heldout", os.path.join(corpus_dir, "heldout.jsonl"),
        "--seeds", str(args.seeds),
        "--seed", str(args.seed),
        "--out", report_path,
    ]
    for flag, value in (("--epochs", args.epochs), ("--batch-size", args.batch_size),
                        ("--k", args.k), ("--lr", args.lr)):
        if value is not None:
            cmd += [flag, str(value)]
    if args.fixed_pairs:
        cmd.append("--fixed-pairs")
    outcome = cli.run(cmd)
    if outcome.exit_code != 0:
        return outcome.exit_code

    with open(report_path, encoding="utf-8") as fh:
        report = json.load(fh)
    print(f"report: {report_path}")
    for arm in ("multiple", "single"):
        mean = report["arms"][arm]["mean"]
        held = mean.get("heldout_retrieval")
        held_txt = f", held-out {held:.4f}" if held is not None else ""
        print(f"  {arm:>8}: seen retrieval {mean['seen_retrieval']:.4f} "
              f"(min {mean['seen_retrieval_min']:.4f}){held_txt}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
