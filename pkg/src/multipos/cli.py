"""Command-line front end.

Subcommands: build-data, to-pairs, synth, train, eval, compare.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Reports are JSON documents written to --out (stdout when omitted);
diagnostics go to stderr. Runs with the same flags and seed leave
byte-identical artifacts; wall-clock times appear only in train logs.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import (
    DataFormatError,
    SentenceGroup,
    assemble_groups,
    attach_hard_negatives,
    gen_cipher_corpus,
    groups_to_pairs,
    pairs_to_groups,
    read_aligned_corpus,
    read_groups_jsonl,
    read_pairs_tsv,
    write_groups_jsonl,
    write_pairs_tsv,
)
from .encoder import NonFiniteGradientError, load_checkpoint
from .evaluation import (
    EvalReport,
    ProbeConfig,
    encode_texts,
    linear_probe,
    mine_pairs_f1,
    retrieval_accuracy,
    spearman,
    sts_eval,
)
from .losses import DegenerateInputError
from .train import NonFiniteLossError, TrainConfig, load_config, train, write_log_jsonl


class UsageError(Exception):
    pass


@dataclass
class CommandOutcome:
    exit_code: int
    artifacts: list[str] = field(default_factory=list)


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; the contract wants 1.
    def error(self, message: str):
        raise UsageError(message)


def _write_report(report: dict, out: str | None) -> list[str]:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        return [out]
    sys.stdout.write(text)
    return []


def _read_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    return lines


def _read_gold_pairs(path: str) -> set[tuple[int, int]]:
    gold = set()
    for lineno, line in enumerate(_read_lines(path), start=1):
        cols = line.split("\t")
        if len(cols) != 2:
            raise DataFormatError(f"{path}:{lineno}: expected 'i<TAB>j'")
        try:
            gold.add((int(cols[0]), int(cols[1])))
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: non-integer index") from exc
    return gold


def _read_sts_tsv(path: str) -> list[tuple[str, str, float]]:
    pairs = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        cols = line.split("\t")
        if len(cols) != 3:
            raise DataFormatError(f"{path}:{lineno}: expected text_a<TAB>text_b<TAB>gold")
        try:
            pairs.append((cols[0], cols[1], float(cols[2])))
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: non-numeric gold score") from exc
    return pairs


def _read_labeled_tsv(path: str) -> tuple[list[str], list[str]]:
    labels, texts = [], []
    for lineno, line in enumerate(_read_lines(path), start=1):
        cols = line.split("\t")
        if len(cols) != 2:
            raise DataFormatError(f"{path}:{lineno}: expected label<TAB>text")
        labels.append(cols[0])
        texts.append(cols[1])
    return labels, texts


def _parse_lang_file(values: list[str]) -> dict[str, str]:
    out = {}
    for v in values:
        if "=" not in v:
            raise UsageError(f"expected LANG=PATH, got {v!r}")
        lang, path = v.split("=", 1)
        if lang in out:
            raise UsageError(f"language {lang!r} given twice")
        out[lang] = path
    return out


def _cmd_build_data(args) -> CommandOutcome:
    lang_paths = _parse_lang_file(args.lang)
    if len(lang_paths) < 2:
        raise UsageError("need at least two --lang LANG=PATH inputs")
    records = read_aligned_corpus(lang_paths)
    result = assemble_groups(records, sorted(lang_paths))
    if args.hard_neg:
        hn_paths = _parse_lang_file(args.hard_neg)
        attach_hard_negatives(result.groups, read_aligned_corpus(hn_paths))
    write_groups_jsonl(result.groups, args.out)
    print(
        f"wrote {len(result.groups)} groups to {args.out}; "
        f"dropped {len(result.dropped_keys)} incomplete keys",
        file=sys.stderr,
    )
    return CommandOutcome(0, [args.out])


def _cmd_to_pairs(args) -> CommandOutcome:
    groups = read_groups_jsonl(args.data)
    conv = groups_to_pairs(groups, args.seed)
    write_pairs_tsv(conv.pairs, args.out)
    print(
        f"wrote {len(conv.pairs)} pairs to {args.out}; "
        f"dropped {conv.dropped_sentences} odd leftover sentences",
        file=sys.stderr,
    )
    return CommandOutcome(0, [args.out])


def _cmd_synth(args) -> CommandOutcome:
    vocab = args.vocab if args.vocab else args.concepts * args.sentence_len
    if not 0.0 <= args.fresh_rate <= 1.0:
        raise UsageError(f"--fresh-rate must be in [0, 1], got {args.fresh_rate}")
    train_groups, eval_groups = gen_cipher_corpus(
        args.concepts, args.sentence_len, args.langs, args.heldout, vocab, args.seed,
        heldout_fresh_rate=args.fresh_rate,
    )
    os.makedirs(args.out, exist_ok=True)
    train_path = os.path.join(args.out, "groups.jsonl")
    write_groups_jsonl(train_groups, train_path)
    artifacts = [train_path]
    if eval_groups:
        heldout_path = os.path.join(args.out, "heldout.jsonl")
        write_groups_jsonl(eval_groups, heldout_path)
        artifacts.append(heldout_path)
    print(f"wrote {len(train_groups)} groups under {args.out}", file=sys.stderr)
    return CommandOutcome(0, artifacts)


def _cmd_train(args) -> CommandOutcome:
    try:
        cfg = load_config(args.config) if args.config else TrainConfig()
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad config: {exc}") from exc
    groups = read_groups_jsonl(args.data)
    try:
        result = train(cfg, groups, out_dir=args.out)
    except ValueError as exc:
        raise UsageError(f"config does not fit the dataset: {exc}") from exc
    log_path = os.path.join(args.out, "log.jsonl")
    write_log_jsonl(result.records, log_path)
    if result.dropped_tail_groups:
        print(f"dropped {result.dropped_tail_groups} tail groups (batch below 2)", file=sys.stderr)
    print(
        f"trained {len(result.records)} steps; checkpoints: {', '.join(result.checkpoint_paths)}",
        file=sys.stderr,
    )
    return CommandOutcome(0, result.checkpoint_paths + [log_path])


def _load_eval_model(args):
    if bool(args.checkpoint) == bool(args.checkpoint_dir):
        raise UsageError("give exactly one of --checkpoint or --checkpoint-dir")
    if args.checkpoint:
        return load_checkpoint(args.checkpoint)[0], args.checkpoint, {}
    cands = sorted(glob.glob(os.path.join(args.checkpoint_dir, "epoch_*.ckpt")))
    if not cands:
        raise DataFormatError(f"no epoch_*.ckpt files under {args.checkpoint_dir}")
    dev_fn = _dev_metric_fn(args)
    scores = {}
    best_path, best_score = None, -np.inf
    for path in cands:
        params = load_checkpoint(path)[0]
        score = dev_fn(params)
        scores[os.path.basename(path)] = score
        if score > best_score:
            best_path, best_score = path, score
    return load_checkpoint(best_path)[0], best_path, scores


def _dev_metric_fn(args):
    task = args.task
    if task in ("retrieval", "mine"):
        if not (args.dev_src and args.dev_tgt):
            raise UsageError(f"--checkpoint-dir with task {task} needs --dev-src and --dev-tgt")
        src = _read_lines(args.dev_src)
        tgt = _read_lines(args.dev_tgt)
        if len(src) != len(tgt) and task == "retrieval":
            raise DataFormatError("dev files must align line by line")
        if task == "retrieval":
            return lambda p: retrieval_accuracy(
                encode_texts(p, src, args.max_len), encode_texts(p, tgt, args.max_len)
            )
        gold = _read_gold_pairs(args.dev_gold) if args.dev_gold else None
        if gold is None:
            raise UsageError("--checkpoint-dir with task mine needs --dev-gold")
        return lambda p: mine_pairs_f1(
            encode_texts(p, src, args.max_len), encode_texts(p, tgt, args.max_len), gold
        ).f1
    if task == "sts":
        if not args.dev_pairs:
            raise UsageError("--checkpoint-dir with task sts needs --dev-pairs")
        dev_pairs = _read_sts_tsv(args.dev_pairs)
        return lambda p: sts_eval(p, dev_pairs, max_len=args.max_len).overall
    if not args.dev_test:
        raise UsageError("--checkpoint-dir with task classify needs --dev-test")
    tr_labels, tr_texts = _read_labeled_tsv(args.train_file)
    dv_labels, dv_texts = _read_labeled_tsv(args.dev_test)
    probe_cfg = ProbeConfig(seed=args.probe_seed)
    return lambda p: linear_probe(
        encode_texts(p, tr_texts, args.max_len),
        tr_labels,
        encode_texts(p, dv_texts, args.max_len),
        dv_labels,
        probe_cfg,
    )


def _cmd_eval(args) -> CommandOutcome:
    params, chosen, dev_scores = _load_eval_model(args)
    meta = {"checkpoint": chosen}
    if dev_scores:
        meta["dev_scores"] = dev_scores
    if args.task == "retrieval":
        if not (args.src and args.tgt):
            raise UsageError("task retrieval needs --src and --tgt")
        src = _read_lines(args.src)
        tgt = _read_lines(args.tgt)
        if len(src) != len(tgt):
            raise DataFormatError("retrieval files must align line by line")
        acc = retrieval_accuracy(
            encode_texts(params, src, args.max_len), encode_texts(params, tgt, args.max_len)
        )
        if args.both_directions:
            back = retrieval_accuracy(
                encode_texts(params, tgt, args.max_len), encode_texts(params, src, args.max_len)
            )
            meta["backward"] = back
        report = EvalReport("retrieval", acc, metadata={**meta, "items": len(src)})
    elif args.task == "mine":
        if not (args.src and args.tgt and args.gold):
            raise UsageError("task mine needs --src, --tgt and --gold")
        src = _read_lines(args.src)
        tgt = _read_lines(args.tgt)
        gold = _read_gold_pairs(args.gold)
        res = mine_pairs_f1(
            encode_texts(params, src, args.max_len),
            encode_texts(params, tgt, args.max_len),
            gold,
            threshold=args.threshold,
        )
        report = EvalReport(
            "mine",
            res.f1,
            metadata={
                **meta,
                "precision": res.precision,
                "recall": res.recall,
                "threshold": res.threshold,
            },
        )
    elif args.task == "sts":
        if not args.pairs:
            raise UsageError("task sts needs --pairs")
        report = sts_eval(params, _read_sts_tsv(args.pairs), max_len=args.max_len)
        report.metadata.update(meta)
    else:
        if not (args.train_file and args.test_file):
            raise UsageError("task classify needs --train-file and --test-file")
        tr_labels, tr_texts = _read_labeled_tsv(args.train_file)
        te_labels, te_texts = _read_labeled_tsv(args.test_file)
        acc = linear_probe(
            encode_texts(params, tr_texts, args.max_len),
            tr_labels,
            encode_texts(params, te_texts, args.max_len),
            te_labels,
            ProbeConfig(seed=args.probe_seed),
        )
        report = EvalReport("classify", acc, metadata={**meta, "test_items": len(te_labels)})
    return CommandOutcome(0, _write_report(asdict(report), args.out))


def _group_texts(groups: list[SentenceGroup], lang: str) -> list[str]:
    missing = [g.id for g in groups if lang not in g.texts]
    if missing:
        raise DataFormatError(f"language {lang!r} missing from groups {missing[:3]}...")
    return [g.texts[lang] for g in groups]


def _check_pair_conservation(groups, pair_groups, dropped: int) -> None:
    """Pair conversion must preserve the sentence multiset (minus reported drops)."""
    before = Counter(t for g in groups for t in g.texts.values())
    after = Counter(t for g in pair_groups for t in g.texts.values())
    missing = sum((before - after).values())
    if missing != dropped or sum((after - before).values()) != 0:
        raise DataFormatError(
            f"pair conversion lost {missing} sentences but reported {dropped} drops"
        )


def _cmd_compare(args) -> CommandOutcome:
    # Desk-scale recipe: tau=1.0 keeps both objectives in their informative
    # regime (min-max output and raw cosine then share the range [-1, 1]),
    # so the arms differ only in grouping and normalization, not temperature.
    try:
        base = load_config(args.config) if args.config else TrainConfig(
            batch_size=32,
            epochs=30,
            k_positives=5,
            tau=1.0,
            lr_main=6e-3,
            warmup_enabled=False,
            hash_bits=15,
        )
        overrides = {}
        if args.epochs is not None:
            overrides["epochs"] = args.epochs
        if args.batch_size is not None:
            overrides["batch_size"] = args.batch_size
        if args.k is not None:
            overrides["k_positives"] = args.k
        if args.lr is not None:
            overrides["lr_main"] = args.lr
        if overrides:
            base = replace(base, **overrides)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad config: {exc}") from exc
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")

    groups = read_groups_jsonl(args.data)
    heldout = read_groups_jsonl(args.heldout)
    train_langs = sorted(groups[0].texts)
    heldout_langs = sorted(set(heldout[0].texts) - set(train_langs)) if heldout else []
    pivot = args.pivot or train_langs[0]

    seen_texts = {lang: _group_texts(groups, lang) for lang in train_langs}

    def evaluate(params) -> dict:
        embs = {lang: encode_texts(params, seen_texts[lang], base.max_len) for lang in train_langs}
        accs = [
            retrieval_accuracy(embs[src], embs[tgt])
            for src in train_langs
            for tgt in train_langs
            if src != tgt
        ]
        out = {
            "seen_retrieval": float(np.mean(accs)),
            "seen_retrieval_min": float(np.min(accs)),
        }
        held_accs = []
        for lang in heldout_langs:
            acc = retrieval_accuracy(
                encode_texts(params, _group_texts(heldout, lang), base.max_len),
                encode_texts(params, _group_texts(heldout, pivot), base.max_len),
            )
            out[f"heldout_retrieval_{lang}"] = acc
            held_accs.append(acc)
        if held_accs:
            out["heldout_retrieval"] = float(np.mean(held_accs))
        return out

    seeds = [args.seed + i for i in range(args.seeds)]
    conv = groups_to_pairs(groups, [args.seed, 3, 0])
    _check_pair_conservation(groups, pairs_to_groups(conv.pairs), conv.dropped_sentences)

    arms: dict[str, dict] = {"multiple": {"runs": []}, "single": {"runs": []}}
    wall = {"multiple": 0.0, "single": 0.0}
    for seed in seeds:
        t0 = time.perf_counter()
        cfg_m = replace(base, seed=seed, objective="multi")
        result_m = train(cfg_m, groups)
        wall["multiple"] += time.perf_counter() - t0
        arms["multiple"]["runs"].append({"seed": seed, **evaluate(result_m.params)})

        t0 = time.perf_counter()
        cfg_s = replace(base, seed=seed, objective="single", k_positives=1)
        if args.fixed_pairs:
            pair_groups = pairs_to_groups(groups_to_pairs(groups, [seed, 3, 0]).pairs)
            result_s = train(cfg_s, pair_groups)
        else:
            # fresh random matching per epoch; each sentence still appears once
            def pair_epoch(epoch: int, _seed=seed):
                return pairs_to_groups(groups_to_pairs(groups, [_seed, 3, epoch]).pairs)

            result_s = train(cfg_s, groups, dataset_fn=pair_epoch)
        wall["single"] += time.perf_counter() - t0
        arms["single"]["runs"].append({"seed": seed, **evaluate(result_s.params)})

    for name, arm in arms.items():
        keys = sorted({k for run in arm["runs"] for k in run if k != "seed"})
        arm["mean"] = {k: float(np.mean([run[k] for run in arm["runs"]])) for k in keys}
        # stderr, not the report: artifacts must be byte-identical across runs
        print(f"arm {name}: {wall[name]:.1f}s over {len(seeds)} seeds", file=sys.stderr)
    report = {
        "task": "compare",
        "seeds": seeds,
        "seen_languages": train_langs,
        "heldout_languages": heldout_langs,
        "pivot": pivot,
        "pairing": "fixed" if args.fixed_pairs else "per_epoch",
        "config": {k: v for k, v in asdict(base).items()},
        "arms": arms,
    }
    return CommandOutcome(0, _write_report(report, args.out))


def build_parser() -> _Parser:
    parser = _Parser(prog="multipos", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-data", parents=[], help="assemble aligned files into a grouped dataset")
    p.add_argument("--lang", action="append", default=[], metavar="LANG=PATH")
    p.add_argument("--hard-neg", action="append", default=[], metavar="LANG=PATH")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_data)

    p = sub.add_parser("to-pairs", help="flatten a grouped dataset to a pair TSV")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_to_pairs)

    p = sub.add_parser("synth", help="generate a cipher-language corpus")
    p.add_argument("--concepts", type=int, default=500)
    p.add_argument("--sentence-len", type=int, default=8)
    p.add_argument("--langs", type=int, default=6)
    p.add_argument("--heldout", type=int, default=1)
    p.add_argument("--vocab", type=int, default=0, help="0 means concepts * sentence-len")
    p.add_argument(
        "--fresh-rate",
        type=float,
        default=0.5,
        help="fraction of each held-out language's vocabulary never seen in training",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train on a grouped dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--task", required=True, choices=("retrieval", "mine", "sts", "classify"))
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--checkpoint-dir", default=None)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--src", default=None)
    p.add_argument("--tgt", default=None)
    p.add_argument("--both-directions", action="store_true")
    p.add_argument("--gold", default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--pairs", default=None)
    p.add_argument("--train-file", default=None)
    p.add_argument("--test-file", default=None)
    p.add_argument("--probe-seed", type=int, default=0)
    p.add_argument("--dev-src", default=None)
    p.add_argument("--dev-tgt", default=None)
    p.add_argument("--dev-gold", default=None)
    p.add_argument("--dev-pairs", default=None)
    p.add_argument("--dev-test", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("compare", help="matched single- vs multi-positive arms")
    p.add_argument("--data", required=True)
    p.add_argument("--heldout", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds per arm")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--pivot", default=None, help="seen target language for held-out retrieval")
    p.add_argument(
        "--fixed-pairs",
        action="store_true",
        help="freeze the single-arm pairing instead of redrawing it per epoch",
    )
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_compare)
    return parser


def run(argv: list[str]) -> CommandOutcome:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return CommandOutcome(1)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return CommandOutcome(1)
    except (DataFormatError, OSError, UnicodeDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return CommandOutcome(2)
    except (
        NonFiniteLossError,
        NonFiniteGradientError,
        DegenerateInputError,
        FloatingPointError,
        ValueError,
    ) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return CommandOutcome(3)


def main() -> None:
    sys.exit(run(sys.argv[1:]).exit_code)


if __name__ == "__main__":
    main()
