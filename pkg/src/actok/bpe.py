"""Byte-pair encoding over integer symbol sequences.

Training repeatedly merges the most frequent adjacent pair across the
corpus (ties broken by the lexicographically smallest pair), assigning new
ids consecutively above the base alphabet, until the vocabulary cap is hit
or no pair repeats often enough. Merges never cross corpus entries, so a
single entry always decodes on its own.

Encoding applies the learned merges in training order, exhaustively;
decoding expands merged ids recursively. decode(encode(s)) == s for every
valid sequence.
"""

from __future__ import annotations

import heapq
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

from actok.errors import CodecError, DatasetError, FitError

FORMAT_NAME = "bpe-model"
FORMAT_VERSION = 1

DEFAULT_MAX_VOCAB = 2048  # total ids: base alphabet plus merges


@dataclass(frozen=True)
class BpeModel:
    base_alphabet_size: int
    merges: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    @property
    def vocab_size(self) -> int:
        return self.base_alphabet_size + len(self.merges)

    @cached_property
    def _ranks(self) -> dict[tuple[int, int], int]:
        return {pair: i for i, pair in enumerate(self.merges)}

    def expansion(self, token: int) -> tuple[int, int]:
        """The (left, right) pair a merged id stands for."""
        return self.merges[token - self.base_alphabet_size]


def _check_symbols(seq, base: int) -> list[int]:
    out = []
    for s in seq:
        s = int(s)
        if not 0 <= s < base:
            raise CodecError(f"symbol {s} outside base alphabet [0, {base})")
        out.append(s)
    return out


def _merge_pass(seq: list[int], left: int, right: int, new_id: int) -> list[int]:
    """Replace every non-overlapping (left, right) occurrence, left to right."""
    out = []
    i = 0
    n = len(seq)
    while i < n:
        if i + 1 < n and seq[i] == left and seq[i + 1] == right:
            out.append(new_id)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def bpe_train_and_encode(corpus, max_vocab: int = DEFAULT_MAX_VOCAB, *,
                         base_alphabet_size: int,
                         min_pair_count: int = 2) -> tuple[BpeModel, list[list[int]]]:
    """Train a BPE model and also return the corpus in fully merged form.

    The returned sequences equal bpe_encode(entry, model) for each corpus
    entry, which makes post-fit token statistics free.
    """
    if base_alphabet_size < 1:
        raise FitError("base alphabet must be non-empty")
    if max_vocab < base_alphabet_size:
        raise FitError(
            f"max_vocab {max_vocab} below base alphabet size {base_alphabet_size}"
        )
    seqs = [_check_symbols(s, base_alphabet_size) for s in corpus]

    counts: dict[tuple[int, int], int] = defaultdict(int)
    where: dict[tuple[int, int], set[int]] = defaultdict(set)
    for i, s in enumerate(seqs):
        for pair in zip(s, s[1:]):
            counts[pair] += 1
            where[pair].add(i)
    heap = [(-c, p) for p, c in counts.items() if c >= min_pair_count]
    heapq.heapify(heap)

    merges: list[tuple[int, int]] = []
    next_id = base_alphabet_size
    while next_id < max_vocab and heap:
        neg, pair = heapq.heappop(heap)
        current = counts.get(pair, 0)
        if current != -neg:
            if current >= min_pair_count:
                heapq.heappush(heap, (-current, pair))
            continue  # stale entry
        if current < min_pair_count:
            break
        left, right = pair
        new_id = next_id
        next_id += 1
        merges.append(pair)
        for i in sorted(where.get(pair, ())):
            old = seqs[i]
            new = _merge_pass(old, left, right, new_id)
            old_pairs = Counter(zip(old, old[1:]))
            new_pairs = Counter(zip(new, new[1:]))
            for p in old_pairs.keys() | new_pairs.keys():
                delta = new_pairs.get(p, 0) - old_pairs.get(p, 0)
                if delta:
                    updated = counts.get(p, 0) + delta
                    if updated > 0:
                        counts[p] = updated
                        if delta > 0 and updated >= min_pair_count:
                            heapq.heappush(heap, (-updated, p))
                    else:
                        counts.pop(p, None)
                if p in new_pairs:
                    where[p].add(i)
                else:
                    where[p].discard(i)
            seqs[i] = new
        counts.pop(pair, None)
        where.pop(pair, None)
    return BpeModel(base_alphabet_size=base_alphabet_size, merges=tuple(merges)), seqs


def bpe_train(corpus, max_vocab: int = DEFAULT_MAX_VOCAB, *,
              base_alphabet_size: int, min_pair_count: int = 2) -> BpeModel:
    """Train a BPE model on a corpus of base-symbol sequences."""
    model, _ = bpe_train_and_encode(corpus, max_vocab,
                                    base_alphabet_size=base_alphabet_size,
                                    min_pair_count=min_pair_count)
    return model


def bpe_encode(seq, model: BpeModel) -> list[int]:
    """Apply the model's merges to a base-symbol sequence.

    Implemented by repeatedly applying the earliest-trained merge present,
    which is equivalent to one exhaustive pass per merge in training order:
    a later merge can only create adjacencies involving its own new id,
    which earlier merges never reference.
    """
    toks = _check_symbols(seq, model.base_alphabet_size)
    if not model.merges:
        return toks
    ranks = model._ranks
    while len(toks) > 1:
        best_rank = None
        for pair in zip(toks, toks[1:]):
            r = ranks.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best_rank = r
        if best_rank is None:
            break
        left, right = model.merges[best_rank]
        toks = _merge_pass(toks, left, right, model.base_alphabet_size + best_rank)
    return toks


def bpe_decode(tokens, model: BpeModel) -> list[int]:
    """Expand merged ids back to base symbols; exact inverse of bpe_encode."""
    out: list[int] = []
    for t in tokens:
        t = int(t)
        if not 0 <= t < model.vocab_size:
            raise CodecError(f"unknown token id {t} (vocab size {model.vocab_size})")
        stack = [t]
        while stack:
            cur = stack.pop()
            if cur < model.base_alphabet_size:
                out.append(cur)
            else:
                left, right = model.expansion(cur)
                stack.append(right)
                stack.append(left)
    return out


def save_bpe(model: BpeModel, path) -> None:
    payload = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "base_alphabet_size": model.base_alphabet_size,
        "merges": [list(p) for p in model.merges],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_bpe(path) -> BpeModel:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"bpe model not found: {path}")
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != FORMAT_NAME or payload.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{path}: not a version-{FORMAT_VERSION} {FORMAT_NAME} file")
    return bpe_from_dict(payload)


def bpe_to_dict(model: BpeModel) -> dict:
    return {
        "base_alphabet_size": model.base_alphabet_size,
        "merges": [list(p) for p in model.merges],
    }


def bpe_from_dict(payload: dict) -> BpeModel:
    merges = tuple((int(l), int(r)) for l, r in payload["merges"])
    base = int(payload["base_alphabet_size"])
    for i, (l, r) in enumerate(merges):
        if not (0 <= l < base + i and 0 <= r < base + i):
            raise DatasetError(f"merge {i} references undefined id: ({l}, {r})")
    return BpeModel(base_alphabet_size=base, merges=merges)
