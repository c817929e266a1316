"""Retrieval, mining, correlation and probe metrics over embeddings.

All similarity-based metrics take unit-norm rows and use dot products;
the encode_texts helper produces such rows from raw sentences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoder import ModelParams, encode, tokenize


@dataclass
class EvalReport:
    task: str
    overall: float
    per_language: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


@dataclass
class MiningResult:
    f1: float
    precision: float
    recall: float
    threshold: float


@dataclass
class ProbeConfig:
    iterations: int = 500
    lr: float = 0.1
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 1 or self.lr <= 0.0 or self.l2 < 0.0:
            raise ValueError("probe needs iterations >= 1, lr > 0 and l2 >= 0")


def encode_texts(params: ModelParams, texts: Sequence[str], max_len: int = 64) -> np.ndarray:
    if len(texts) == 0:
        raise ValueError("no texts to encode")
    ids = [tokenize(t, max_len=max_len, hash_bits=params.hash_bits) for t in texts]
    return encode(params, ids)[0]


def _check_rows(name: str, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty 2-d array, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError(f"non-finite values in {name}")
    return x


def retrieval_accuracy(src_embs, tgt_embs) -> float:
    """Fraction of sources whose nearest target is the aligned one.

    Row i of the targets is the gold match of source i; cosine ties
    resolve to the lowest index.
    """
    src = _check_rows("src_embs", src_embs)
    tgt = _check_rows("tgt_embs", tgt_embs)
    if src.shape != tgt.shape:
        raise ValueError(f"aligned sets must share a shape, got {src.shape} and {tgt.shape}")
    pred = (src @ tgt.T).argmax(axis=1)
    return float((pred == np.arange(src.shape[0])).mean())


def mine_pairs_f1(src_embs, tgt_embs, gold_pairs, threshold: float | None = None) -> MiningResult:
    """Threshold-based pair mining scored against a gold pair set.

    Each source nominates its best-scoring target; nominations at or
    above the threshold become predictions. With no threshold given,
    every distinct nomination score is tried and the best F1 wins
    (ties prefer the higher threshold).
    """
    src = _check_rows("src_embs", src_embs)
    tgt = _check_rows("tgt_embs", tgt_embs)
    if src.shape[1] != tgt.shape[1]:
        raise ValueError("source and target dimensions differ")
    gold = {(int(i), int(j)) for i, j in gold_pairs}
    if not gold:
        raise ValueError("gold_pairs must be non-empty")
    for i, j in gold:
        if not (0 <= i < src.shape[0] and 0 <= j < tgt.shape[0]):
            raise ValueError(f"gold pair {(i, j)} outside the candidate matrices")

    sims = src @ tgt.T
    best = sims.argmax(axis=1)
    scores = sims[np.arange(src.shape[0]), best]

    def scored(th: float) -> tuple[float, float, float]:
        pred = {(int(i), int(best[i])) for i in range(src.shape[0]) if scores[i] >= th}
        tp = len(pred & gold)
        precision = tp / len(pred) if pred else 0.0
        recall = tp / len(gold)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return f1, precision, recall

    if threshold is not None:
        f1, p, r = scored(threshold)
        return MiningResult(f1, p, r, float(threshold))
    best_out: MiningResult | None = None
    for th in sorted({float(s) for s in scores}, reverse=True):
        f1, p, r = scored(th)
        if best_out is None or f1 > best_out.f1:
            best_out = MiningResult(f1, p, r, th)
    return best_out


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(pred, gold) -> float:
    """Spearman rank correlation with average ranks for ties."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gold, dtype=np.float64)
    if p.ndim != 1 or p.shape != g.shape:
        raise ValueError(f"expected equal-length 1-d vectors, got {p.shape} and {g.shape}")
    if p.size < 2:
        raise ValueError("need at least 2 observations")
    if not (np.isfinite(p).all() and np.isfinite(g).all()):
        raise ValueError("non-finite inputs")
    if (p == p[0]).all() or (g == g[0]).all():
        raise ValueError("rank correlation undefined for a constant vector")
    rp = _average_ranks(p)
    rg = _average_ranks(g)
    rp = rp - rp.mean()
    rg = rg - rg.mean()
    return float((rp @ rg) / math.sqrt(float(rp @ rp) * float(rg @ rg)))


def sts_eval(params: ModelParams, pairs: Sequence[tuple[str, str, float]], max_len: int = 64) -> EvalReport:
    """Spearman between encoded-pair cosines and gold similarity scores."""
    if len(pairs) < 2:
        raise ValueError("need at least 2 scored pairs")
    texts_a = [a for a, _, _ in pairs]
    texts_b = [b for _, b, _ in pairs]
    gold = [float(s) for _, _, s in pairs]
    embs_a = encode_texts(params, texts_a, max_len=max_len)
    embs_b = encode_texts(params, texts_b, max_len=max_len)
    preds = (embs_a * embs_b).sum(axis=1)
    rho = spearman(preds, gold)
    return EvalReport(task="sts", overall=rho, metadata={"pairs": len(pairs)})


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def linear_probe(train_embs, train_labels, test_embs, test_labels, cfg: ProbeConfig | None = None) -> float:
    """Accuracy of a multinomial logistic probe on frozen embeddings.

    Full-batch gradient descent with fixed iteration count; L2 applies
    to the weights, not the bias. Test labels must come from the
    training label set.
    """
    cfg = cfg if cfg is not None else ProbeConfig()
    X = _check_rows("train_embs", train_embs)
    Xt = _check_rows("test_embs", test_embs)
    if X.shape[1] != Xt.shape[1]:
        raise ValueError("train and test dimensions differ")
    labels = list(train_labels)
    labels_t = list(test_labels)
    if len(labels) != X.shape[0] or len(labels_t) != Xt.shape[0]:
        raise ValueError("label counts do not match embedding counts")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError("need at least 2 classes")
    unseen = sorted(set(labels_t) - set(classes))
    if unseen:
        raise ValueError(f"test labels never seen in training: {unseen}")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[c] for c in labels])
    onehot = np.zeros((X.shape[0], len(classes)))
    onehot[np.arange(X.shape[0]), y] = 1.0

    rng = np.random.default_rng(cfg.seed)
    W = rng.normal(0.0, 0.01, size=(X.shape[1], len(classes)))
    b = np.zeros(len(classes))
    n = X.shape[0]
    for _ in range(cfg.iterations):
        probs = _softmax_rows(X @ W + b)
        diff = (probs - onehot) / n
        W -= cfg.lr * (X.T @ diff + cfg.l2 * W)
        b -= cfg.lr * diff.sum(axis=0)
    pred = (Xt @ W + b).argmax(axis=1)
    truth = np.array([index[c] for c in labels_t])
    return float((pred == truth).mean())
