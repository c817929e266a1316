"""Contrastive objectives with exact input-space gradients.

Similarities are plain dot products, so callers are expected to pass
unit-norm rows (dot equals cosine on the unit sphere; the encoder
guarantees this). All arithmetic runs in float64 and softmax terms are
evaluated in the log domain with max subtraction, summing in candidate
order so repeated calls are bit-identical.

Candidate layout for anchor i, in order: the K positives of group i,
then the other N-1 anchors by ascending index, then the optional hard
negative of group i. The denominator always includes the numerator
terms, so every per-anchor loss is non-negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NORMALIZATIONS = ("min_max", "identity")


class DegenerateInputError(ValueError):
    """A zero-norm vector was passed where a direction is required."""


@dataclass
class LossConfig:
    """Knobs shared by both objectives.

    tau: softmax temperature, must be positive.
    normalization: per-anchor score transform used by the multi-positive
        objective ("min_max" or "identity"). The single-positive
        objective always consumes raw similarities.
    use_hard_negatives: plumbing flag for the trainer; the loss itself
        uses whatever hard negatives the caller passes explicitly.
    """

    tau: float = 0.05
    normalization: str = "min_max"
    use_hard_negatives: bool = False

    def __post_init__(self) -> None:
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive and finite, got {self.tau}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(
                f"normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}"
            )


@dataclass
class SimilarityRow:
    """One anchor's candidate similarities, positives first."""

    anchor_index: int
    candidate_scores: list[float]
    positive_count: int

    def __post_init__(self) -> None:
        if self.anchor_index < 0:
            raise ValueError("anchor_index must be non-negative")
        if self.positive_count < 1:
            raise ValueError("positive_count must be at least 1")
        if self.positive_count >= len(self.candidate_scores):
            raise ValueError("a similarity row needs at least one negative candidate")
        for x in self.candidate_scores:
            if not math.isfinite(x):
                raise ValueError("candidate scores must be finite")


@dataclass
class LossOutput:
    """Loss value in nats plus gradients matching the input shapes."""

    value: float
    grad_anchor: np.ndarray
    grad_positives: np.ndarray
    grad_hard_negatives: np.ndarray | None = None
    rows: list[SimilarityRow] = field(default_factory=list, repr=False)


def cosine_sim(a, b) -> float:
    """Cosine similarity of two 1-d vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"expected equal-length 1-d vectors, got {a.shape} and {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("non-finite input to cosine_sim")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity undefined for zero-norm input")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def minmax_normalize(scores, tau: float) -> np.ndarray:
    """Affine-map scores to [-1/tau, 1/tau]; all zeros when max == min."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("scores must be a non-empty 1-d sequence")
    if not np.isfinite(s).all():
        raise ValueError("non-finite scores")
    if not (tau > 0.0 and math.isfinite(tau)):
        raise ValueError(f"tau must be positive and finite, got {tau}")
    lo = s.min()
    hi = s.max()
    if hi == lo:
        return np.zeros_like(s)
    return ((s - lo) / (hi - lo) * 2.0 - 1.0) / tau


def _validate_rows(name: str, x: np.ndarray, dim: int | None) -> None:
    if not np.isfinite(x).all():
        raise ValueError(f"non-finite values in {name}")
    if dim is not None and x.shape[-1] != dim:
        raise ValueError(f"{name} has dimension {x.shape[-1]}, expected {dim}")


def _loss_kernel(
    anchors: np.ndarray,
    positives: np.ndarray,
    hard_negatives: np.ndarray | None,
    tau: float,
    normalization: str,
) -> LossOutput:
    # Shared forward/backward for both objectives. positives is (N, K, d);
    # the single-positive path passes K=1 and identity normalization.
    A = np.ascontiguousarray(anchors, dtype=np.float64)
    P = np.ascontiguousarray(positives, dtype=np.float64)
    if A.ndim != 2 or P.ndim != 3:
        raise ValueError(f"expected anchors (N,d) and positives (N,K,d), got {A.shape} and {P.shape}")
    N, d = A.shape
    if N < 2:
        raise ValueError(f"need at least 2 anchors so in-batch negatives exist, got N={N}")
    if P.shape[0] != N or P.shape[2] != d:
        raise ValueError(f"positives shape {P.shape} does not match anchors {A.shape}")
    K = P.shape[1]
    if K < 1:
        raise ValueError("need at least one positive per anchor")
    _validate_rows("anchors", A, None)
    _validate_rows("positives", P, d)
    H = None
    if hard_negatives is not None:
        H = np.ascontiguousarray(hard_negatives, dtype=np.float64)
        if H.shape != (N, d):
            raise ValueError(f"hard_negatives shape {H.shape}, expected {(N, d)}")
        _validate_rows("hard_negatives", H, d)

    grad_a = np.zeros_like(A)
    grad_p = np.zeros_like(P)
    grad_h = np.zeros_like(H) if H is not None else None
    rows: list[SimilarityRow] = []
    total = 0.0

    for i in range(N):
        others = np.concatenate([np.arange(i), np.arange(i + 1, N)])
        cand = np.concatenate([P[i], A[others]], axis=0)
        if H is not None:
            cand = np.concatenate([cand, H[i : i + 1]], axis=0)
        s = cand @ A[i]
        rows.append(SimilarityRow(i, [float(x) for x in s], K))

        if normalization == "min_max":
            z = minmax_normalize(s, tau) / tau
        else:
            z = s / tau

        # Rebase the numerator on its own max so it never underflows to
        # log(0); when a positive holds the global max both rebases
        # coincide and den >= num holds exactly in floating point.
        zmax = z.max()
        zpmax = z[:K].max()
        e = np.exp(z - zmax)
        ep = np.exp(z[:K] - zpmax)
        den = e.sum()
        num = ep.sum()
        li = (zmax + math.log(den)) - (zpmax + math.log(num))
        # the two sums round independently, so a -1e-16 residue can
        # appear when the positives hold all the mass; the true value
        # is >= 0
        total += li if li > 0.0 else 0.0

        g = e / den
        g[:K] -= ep / num

        if normalization == "min_max":
            lo = s.min()
            hi = s.max()
            if hi == lo:
                # Degenerate rows normalize to the constant zero map, so
                # no gradient flows through them.
                continue
            u = (s - lo) / (hi - lo)
            base = 2.0 / (tau * tau * (hi - lo))
            w = base * g
            gsum = g.sum()
            usum = float(g @ u)
            w[int(np.argmin(s))] -= base * (gsum - usum)
            w[int(np.argmax(s))] -= base * usum
        else:
            w = g / tau

        grad_a[i] += cand.T @ w
        grad_p[i] += np.outer(w[:K], A[i])
        grad_a[others] += np.outer(w[K : K + N - 1], A[i])
        if H is not None:
            grad_h[i] += w[-1] * A[i]

    grad_a /= N
    grad_p /= N
    if grad_h is not None:
        grad_h /= N
    return LossOutput(total / N, grad_a, grad_p, grad_h, rows)


def single_positive_loss(anchors, positives, cfg: LossConfig) -> LossOutput:
    """Mean InfoNCE over anchors with one positive each.

    Candidates for anchor i are its positive followed by the other
    anchors. Scores stay raw (no normalization) regardless of
    cfg.normalization. grad_positives comes back with shape (N, d).
    """
    P = np.asarray(positives, dtype=np.float64)
    if P.ndim != 2:
        raise ValueError(f"expected positives of shape (N,d), got {P.shape}")
    out = _loss_kernel(anchors, P[:, None, :], None, cfg.tau, "identity")
    return LossOutput(out.value, out.grad_anchor, out.grad_positives[:, 0, :], None, out.rows)


def multi_positive_loss(anchors, positives, hard_negatives=None, cfg: LossConfig | None = None) -> LossOutput:
    """Mean multi-positive loss: -log of the positives' softmax mass.

    Per anchor the candidate scores (K positives, other anchors, then
    the optional hard negative) pass through cfg.normalization, and the
    loss is -log(sum_pos exp(S/tau) / sum_all exp(S/tau)). Gradients
    are exact, including the min/max subgradient terms of the
    normalizer (first-index tie-break, zero in the degenerate
    max == min case).
    """
    cfg = cfg if cfg is not None else LossConfig()
    return _loss_kernel(anchors, positives, hard_negatives, cfg.tau, cfg.normalization)


def similarity_rows(anchors, positives, hard_negatives=None) -> list[SimilarityRow]:
    """Per-anchor candidate cosines in the documented layout, via loops."""
    A = np.asarray(anchors, dtype=np.float64)
    P = np.asarray(positives, dtype=np.float64)
    N = A.shape[0]
    K = P.shape[1]
    rows = []
    for i in range(N):
        scores = [cosine_sim(A[i], P[i, k]) for k in range(K)]
        scores += [cosine_sim(A[i], A[j]) for j in range(N) if j != i]
        if hard_negatives is not None:
            scores.append(cosine_sim(A[i], np.asarray(hard_negatives, dtype=np.float64)[i]))
        rows.append(SimilarityRow(i, scores, K))
    return rows


def loss_oracle(anchors, positives, hard_negatives=None, cfg: LossConfig | None = None) -> float:
    """Reference loss by naive per-candidate summation, for tests.

    Dispatches on the positives rank: (N,d) means the single-positive
    objective, (N,K,d) the multi-positive one. No vectorized shortcuts
    and no max subtraction; fine for small instances only.
    """
    cfg = cfg if cfg is not None else LossConfig()
    P = np.asarray(positives, dtype=np.float64)
    if P.ndim == 2:
        if hard_negatives is not None:
            raise ValueError("the single-positive objective takes no hard negatives")
        P = P[:, None, :]
        multi = False
    elif P.ndim == 3:
        multi = True
    else:
        raise ValueError(f"positives must be rank 2 or 3, got shape {P.shape}")

    total = 0.0
    rows = similarity_rows(anchors, P, hard_negatives)
    for row in rows:
        scores = row.candidate_scores
        if multi and cfg.normalization == "min_max":
            lo = min(scores)
            hi = max(scores)
            if hi == lo:
                scaled = [0.0 for _ in scores]
            else:
                scaled = [((x - lo) / (hi - lo) * 2.0 - 1.0) / cfg.tau for x in scores]
        else:
            scaled = scores
        num = 0.0
        den = 0.0
        for c, x in enumerate(scaled):
            term = math.exp(x / cfg.tau)
            den += term
            if c < row.positive_count:
                num += term
        total += math.log(den) - math.log(num)
    return total / len(rows)
