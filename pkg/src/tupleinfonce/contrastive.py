"""Tuple disturbing, the mixture negative sampler, and the InfoNCE losses.

Negatives are built in-batch. The pool is the batch of positives; a
``k``-disturbed copy of pool tuple ``j`` swaps in modality ``k`` from pool
tuple ``d(j) != j``. Each anchor ``i`` gets one negative per slot, drawn at
a base index ``j != i`` and typed i.i.d. by the mixture weights: type 0 is
the ordinary tuple ``j``, type ``k >= 1`` its ``k``-disturbed copy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoder import DropoutDraw, DropoutPolicy, EncoderState, sample_dropout_masks
from .numeric import Tape, Var, concat_rows, divide, group_scores, softmax_cross_entropy, take_rows
from .rng import AUGMENT, DISTURB, DROPOUT, NEGATIVES, substream
from .synthgen import AugmentParams, TupleBatch, augment_tuple

__all__ = [
    "ContrastBatch",
    "LossStreams",
    "NegativeMix",
    "Negatives",
    "disturb",
    "disturb_naive",
    "infonce_loss",
    "infonce_pipeline",
    "sample_negatives",
    "tuple_infonce_loss",
]


@dataclass(frozen=True, eq=False)
class NegativeMix:
    """Mixture weights ``(a_0, a_1, ..., a_K)``; stored unnormalised."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "weights", w)
        if w.size < 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError(f"mixture weights must be finite and >= 0, got {w.tolist()}")

    @classmethod
    def ordinary(cls, K: int) -> "NegativeMix":
        w = np.zeros(K + 1)
        w[0] = 1.0
        return cls(w)

    @property
    def K(self) -> int:
        return self.weights.size - 1

    def probabilities(self) -> np.ndarray:
        total = self.weights.sum()
        if total <= 0:
            raise ValueError("all mixture weights are zero")
        return self.weights / total


def disturb(batch: TupleBatch, k: int, rng: np.random.Generator) -> tuple[TupleBatch, np.ndarray]:
    """Replace modality ``k`` of every tuple ``j`` with that of tuple ``d(j) != j``.

    Returns the disturbed batch and the index map ``d``.
    """
    n = len(batch)
    if n < 2:
        raise ValueError("disturbing needs a batch of at least 2 tuples")
    d = (np.arange(n) + rng.integers(1, n, size=n)) % n
    mods = list(batch.modalities)
    mods[k] = batch.modalities[k][d]
    present = batch.present.copy()
    present[:, k] = batch.present[d, k]
    return TupleBatch(mods, batch.scene_ids.copy(), present), d


def disturb_naive(batch: TupleBatch, rng: np.random.Generator) -> tuple[TupleBatch, np.ndarray]:
    """Re-index every modality independently; returns the batch and ``(n, K)`` sources."""
    n = len(batch)
    if n < 2:
        raise ValueError("disturbing needs a batch of at least 2 tuples")
    d = (np.arange(n)[:, None] + rng.integers(1, n, size=(n, batch.K))) % n
    mods = [v[d[:, k]] for k, v in enumerate(batch.modalities)]
    present = np.stack([batch.present[d[:, k], k] for k in range(batch.K)], axis=1)
    return TupleBatch(mods, batch.scene_ids.copy(), present), d


@dataclass(eq=False)
class Negatives:
    """Negatives for every anchor, addressed into a candidate bank.

    ``bank`` stacks the pool followed by one disturbed copy per active type.
    ``index[i, s]`` points into the bank, ``kind[i, s]`` is the type
    (0 ordinary, ``k`` for modality ``k - 1`` disturbed, or 1 for the naive
    all-modality disturbance), ``base[i, s]`` the pool index ``j`` and
    ``source[i, s]`` the index the disturbed modality came from (-1 if none).
    """

    bank: TupleBatch
    blocks: list[int]
    index: np.ndarray
    kind: np.ndarray
    base: np.ndarray
    source: np.ndarray
    naive: bool = False
    block_sources: list = field(default_factory=list)

    def tuples(self) -> TupleBatch:
        return self.bank.take(self.index.reshape(-1))


def sample_negatives(
    pool: TupleBatch,
    alpha: NegativeMix,
    count: int,
    rng: np.random.Generator,
    disturb_rng: np.random.Generator | None = None,
    naive: bool = False,
) -> Negatives:
    """Draw ``count`` negatives for each of the ``len(pool)`` anchors.

    When ``count == len(pool) - 1`` every other pool index is used once as a
    base (the standard in-batch scheme); otherwise bases are drawn uniformly
    from the other indices. With ``naive=True`` ``alpha`` must have two
    entries: ordinary and all-modality-disturbed.
    """
    B = len(pool)
    if B < 2:
        raise ValueError("negative pool needs at least 2 tuples")
    n_types = 2 if naive else pool.K + 1
    if alpha.weights.size != n_types:
        raise ValueError(f"expected {n_types} mixture weights, got {alpha.weights.size}")
    p = alpha.probabilities()
    disturb_rng = rng if disturb_rng is None else disturb_rng

    others = np.array([[j for j in range(B) if j != i] for i in range(B)], dtype=np.int64)
    if count == B - 1:
        base = others
    else:
        base = others[np.arange(B)[:, None], rng.integers(0, B - 1, size=(B, count))]
    if p[0] == 1.0:
        kind = np.zeros((B, count), dtype=np.int64)
    else:
        kind = rng.choice(n_types, size=(B, count), p=p)

    banks, offsets, blocks, sources = [pool], np.zeros(n_types, dtype=np.int64), [0], [None]
    source = np.full((B, count), -1, dtype=np.int64)
    for t in range(1, n_types):
        if p[t] == 0:
            continue
        if naive:
            block, d = disturb_naive(pool, disturb_rng)
        else:
            block, d = disturb(pool, t - 1, disturb_rng)
        offsets[t] = sum(len(b) for b in banks)
        banks.append(block)
        blocks.append(t)
        sources.append(d)
        sel = kind == t
        source[sel] = d[base[sel]] if d.ndim == 1 else -1
    index = offsets[kind] + base
    bank = TupleBatch.concat(banks) if len(banks) > 1 else pool
    return Negatives(bank, blocks, index, kind, base, source, naive, sources)


def infonce_loss(anchors: Var, candidates: Var, n: int, tau: float) -> Var:
    """Mean of ``-log softmax(a_i . c_ij / tau)[0]``; candidate 0 of each block is the positive."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if n < 2:
        raise ValueError("need at least 2 candidates per anchor")
    scores = group_scores(anchors, candidates, n)
    return softmax_cross_entropy(divide(scores, tau), np.zeros(anchors.shape[0], dtype=np.int64))


@dataclass
class LossStreams:
    """Independent random streams consumed by one loss evaluation."""

    augment: np.random.Generator
    dropout: np.random.Generator
    negatives: np.random.Generator
    disturb: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int, *names) -> "LossStreams":
        return cls(
            substream(seed, AUGMENT, *names),
            substream(seed, DROPOUT, *names),
            substream(seed, NEGATIVES, *names),
            substream(seed, DISTURB, *names),
        )


@dataclass(eq=False)
class ContrastBatch:
    anchors: TupleBatch
    positives: TupleBatch
    negatives: Negatives
    tau: float
    dropout: DropoutDraw

    @property
    def N(self) -> int:
        return self.negatives.index.shape[1] + 1

    def candidate_index(self) -> np.ndarray:
        B = len(self.anchors)
        return np.concatenate([np.arange(B)[:, None], self.negatives.index], axis=1)

    def to_json(self) -> str:
        neg = self.negatives
        return json.dumps(
            {
                "tau": self.tau,
                "anchor_scene_ids": self.anchors.scene_ids.tolist(),
                "positive_scene_ids": self.positives.scene_ids.tolist(),
                "negative_kind": neg.kind.tolist(),
                "negative_base": neg.base.tolist(),
                "negative_source": neg.source.tolist(),
                "dropout_active": self.dropout.active,
                "anchor_mask": self.dropout.anchor.tolist(),
                "candidate_mask": self.dropout.candidate.tolist(),
            },
            sort_keys=True,
        )


def _no_dropout(K: int) -> DropoutDraw:
    full = np.ones(K, dtype=bool)
    return DropoutDraw(False, full, full)


def _encode_blocks(encoder, tape, pvars, batch: TupleBatch, sizes: Sequence[int]) -> Var:
    # blocks are encoded separately so each block's rows are computed identically
    # whatever else sits in the bank
    out, start = [], 0
    for size in sizes:
        out.append(encoder.forward(tape, pvars, batch.take(np.arange(start, start + size))))
        start += size
    return concat_rows(out) if len(out) > 1 else out[0]


def _prepare(encoder, anchors, beta, streams, dropout, tape, pvars, positives=None):
    if tape is None:
        tape = Tape()
        pvars = encoder.register(tape)
    if positives is None:
        positives = augment_tuple(anchors, beta, streams.augment)
    elif len(positives) != len(anchors) or positives.dims != anchors.dims:
        raise ValueError("positives must align with anchors")
    draw = sample_dropout_masks(dropout, anchors.K, streams.dropout) if dropout is not None else _no_dropout(anchors.K)
    return tape, pvars, positives, draw


def tuple_infonce_loss(
    encoder: EncoderState,
    anchors: TupleBatch,
    beta: AugmentParams,
    alpha: NegativeMix,
    tau: float,
    streams: LossStreams,
    dropout: DropoutPolicy | None = None,
    tape: Tape | None = None,
    pvars: dict | None = None,
    naive: bool = False,
    n_candidates: int | None = None,
    positives: TupleBatch | None = None,
) -> tuple[Var, ContrastBatch]:
    """TupleInfoNCE loss on one batch of anchors.

    Positives are ``beta``-augmented anchors; negatives come from
    :func:`sample_negatives` over the positives. Under an active dropout
    draw the anchors get one mask and every candidate shares another.
    Passing ``positives`` overrides the augmentation. Returns the loss
    variable (on ``tape``) and the assembled batch.
    """
    tape, pvars, positives, draw = _prepare(encoder, anchors, beta, streams, dropout, tape, pvars, positives)
    B = len(anchors)
    N = B if n_candidates is None else n_candidates
    negs = sample_negatives(positives, alpha, N - 1, streams.negatives, streams.disturb, naive=naive)
    a = encoder.forward(tape, pvars, anchors.with_mask(draw.anchor))
    bank = _encode_blocks(encoder, tape, pvars, negs.bank.with_mask(draw.candidate), [B] * len(negs.blocks))
    batch = ContrastBatch(anchors, positives, negs, tau, draw)
    cands = take_rows(bank, batch.candidate_index())
    return infonce_loss(a, cands, N, tau), batch


def infonce_pipeline(
    encoder: EncoderState,
    anchors: TupleBatch,
    beta: AugmentParams,
    tau: float,
    streams: LossStreams,
    dropout: DropoutPolicy | None = None,
    tape: Tape | None = None,
    pvars: dict | None = None,
) -> Var:
    """Plain tuple InfoNCE: each anchor contrasts its positive with all other positives."""
    tape, pvars, positives, draw = _prepare(encoder, anchors, beta, streams, dropout, tape, pvars)
    B = len(anchors)
    a = encoder.forward(tape, pvars, anchors.with_mask(draw.anchor))
    p = encoder.forward(tape, pvars, positives.with_mask(draw.candidate))
    order = np.array([[i] + [j for j in range(B) if j != i] for i in range(B)])
    return infonce_loss(a, take_rows(p, order), B, tau)
