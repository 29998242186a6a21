"""Mention/entity token sequences, the desk-scale bi-encoder, and the EL loss.

The encoder is an embedding table + mean pooling + one tanh dense layer per
tower.  It stands behind the same contract as a transformer bi-encoder (two
towers, one pooled vector each, dot-product scoring) and is trainable in
seconds at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dataset import tokenize
from .store import EntityRecord, MentionRecord

UNK, CLS, SEP, M_START, M_END, ENT = range(6)
SPECIAL_TOKENS = ["[UNK]", "[CLS]", "[SEP]", "[M_s]", "[M_e]", "[ENT]"]

MAX_SEQ_LEN = 128


class EncoderError(ValueError):
    pass


class Vocabulary:
    """Token-to-id map; id equals line number in the vocab file."""

    def __init__(self, tokens: list[str] | None = None):
        self._tokens = list(SPECIAL_TOKENS)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        self.unk_count = 0
        for t in tokens or []:
            if t not in self._ids:
                self._ids[t] = len(self._tokens)
                self._tokens.append(t)

    def __len__(self) -> int:
        return len(self._tokens)

    def encode(self, token: str) -> int:
        idx = self._ids.get(token)
        if idx is None:
            self.unk_count += 1
            return UNK
        return idx

    def save(self, path: str | Path):
        with Path(path).open("w") as fh:
            for t in self._tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens = [line.rstrip("\n") for line in Path(path).open()]
        vocab = cls()
        vocab._tokens = tokens
        vocab._ids = {t: i for i, t in enumerate(tokens)}
        return vocab

    @classmethod
    def build(cls, registry, mentions: list[MentionRecord]) -> "Vocabulary":
        seen: dict[str, None] = {}
        for rec in registry:
            for t in tokenize(rec.title) + tokenize(rec.description):
                seen.setdefault(t)
        for m in mentions:
            for t in (*m.context_left, *m.mention, *m.context_right):
                seen.setdefault(t)
        return cls(list(seen))


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.tokens)


def build_mention_seq(rec: MentionRecord, vocab: Vocabulary,
                      budget: int = MAX_SEQ_LEN) -> TokenSequence:
    """[CLS] ctxt_l [M_s] mention [M_e] ctxt_r [SEP], mention never truncated.

    Over budget, contexts shrink from the outside in, kept sides balanced to
    within one token (the left side takes the odd slot).
    """
    mention = [vocab.encode(t) for t in rec.mention]
    avail = budget - 4 - len(mention)
    if avail < 0:
        raise EncoderError(f"mention of {len(mention)} tokens exceeds budget {budget}")
    left = [vocab.encode(t) for t in rec.context_left]
    right = [vocab.encode(t) for t in rec.context_right]
    if len(left) + len(right) > avail:
        half = avail // 2
        want_left = half + (avail % 2)
        if len(left) <= want_left:
            keep_left = len(left)
            keep_right = avail - keep_left
        elif len(right) <= avail - want_left:
            keep_right = len(right)
            keep_left = avail - keep_right
        else:
            keep_left, keep_right = want_left, avail - want_left
        left = left[len(left) - keep_left:]
        right = right[:keep_right]
    toks = [CLS, *left, M_START, *mention, M_END, *right, SEP]
    return TokenSequence(tuple(toks))


def build_entity_seq(rec: EntityRecord, vocab: Vocabulary,
                     budget: int = MAX_SEQ_LEN) -> TokenSequence:
    """[CLS] title [ENT] description [SEP], description truncated on the right."""
    title = [vocab.encode(t) for t in tokenize(rec.title)]
    avail = budget - 3 - len(title)
    if avail < 0:
        raise EncoderError(f"title of {len(title)} tokens exceeds budget {budget}")
    desc = [vocab.encode(t) for t in tokenize(rec.description)][:avail]
    return TokenSequence((CLS, *title, ENT, *desc, SEP))


# the marked segment (mention span, or entity title) is what is being linked;
# its tokens count this many times more than context tokens when pooling
SPAN_WEIGHT = 8.0


def _span_bounds(tokens: tuple[int, ...]) -> tuple[int, int]:
    """Half-open range of the emphasized segment of a sequence."""
    if M_START in tokens and M_END in tokens:
        lo, hi = tokens.index(M_START) + 1, tokens.index(M_END)
        return (lo, hi) if lo <= hi else (0, 0)
    if ENT in tokens:
        return 1, tokens.index(ENT)
    return 0, 0


def bag_counts(seqs: list[TokenSequence], vocab_size: int,
               span_weight: float = SPAN_WEIGHT) -> np.ndarray:
    """Weighted mean-pooling: row i holds weight(token)/total over sequence i."""
    out = np.zeros((len(seqs), vocab_size))
    for i, seq in enumerate(seqs):
        lo, hi = _span_bounds(seq.tokens)
        for pos, t in enumerate(seq.tokens):
            out[i, t] += span_weight if lo <= pos < hi else 1.0
        out[i] /= len(seq) + (span_weight - 1.0) * (hi - lo)
    return out


def encoder_params(store: ad.ParameterStore, prefix: str, vocab_size: int, d: int,
                   rng: np.random.Generator):
    store.add(f"{prefix}.emb", (vocab_size, d), rng)
    store.add(f"{prefix}.W", (d, d), rng)
    store.add(f"{prefix}.b", (d,), rng, init="zeros")


def encode_batch(seqs: list[TokenSequence], store: ad.ParameterStore, prefix: str,
                 vocab_size: int) -> ad.Tensor:
    """Pooled tower output: tanh(meanpool(emb[tokens]) @ W + b), one row per seq."""
    counts = ad.constant(bag_counts(seqs, vocab_size), name=f"{prefix}.counts")
    pooled = ad.matmul(counts, store[f"{prefix}.emb"])
    pre = ad.add(ad.matmul(pooled, store[f"{prefix}.W"]),
                 ad.reshape(store[f"{prefix}.b"], (1, -1)))
    return ad.tanh(pre)


def score(y_m: np.ndarray, y_e: np.ndarray) -> float:
    """Dot-product candidate score."""
    y_m = np.asarray(y_m, dtype=np.float64)
    y_e = np.asarray(y_e, dtype=np.float64)
    if y_m.shape != y_e.shape:
        raise EncoderError(f"dimension mismatch: {y_m.shape} vs {y_e.shape}")
    return float(y_m @ y_e)


def loss_el(scores: ad.Tensor) -> ad.Tensor:
    """In-batch EL loss: mean_i [-s(m_i, e_i) + log sum_j exp s(m_i, e_j)].

    Row i's gold entity is column i; log-sum-exp is max-shifted.
    """
    vals = scores.values
    if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
        raise EncoderError("loss_el expects a square score matrix")
    if not np.all(np.isfinite(vals)):
        raise EncoderError("non-finite scores in loss_el")
    n = vals.shape[0]
    lse = ad.logsumexp_rows(scores)
    diag = ad.sum_(ad.mul(scores, ad.constant(np.eye(n))), axis=1)
    return ad.mean_(ad.sub(lse, diag))
