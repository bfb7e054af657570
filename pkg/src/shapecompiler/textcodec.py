"""Trainable byte-pair encoding over lowercase text.

The base alphabet is all 256 byte values, so any UTF-8 input encodes and
the decode side reassembles the exact lowercase byte stream: the roundtrip
is lossless by construction. Padded text codes use positional pad ids --
slot j of the padding region holds vocab_size + j -- which keeps pads
disjoint from content ids and makes the content boundary recoverable
without a length field.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ContractError, FileFormatError

log = logging.getLogger(__name__)

N_TEXT = 256  # paper-preset slot count; desk presets pass their own


@dataclass
class BpeVocab:
    """Ordered merge rules plus the token table they induce."""

    merges: list = field(default_factory=list)      # [(bytes, bytes), ...]
    tokens: list = field(default_factory=list)      # id -> bytes

    def __post_init__(self):
        if not self.tokens:
            self.tokens = [bytes([i]) for i in range(256)]
            for a, b in self.merges:
                self.tokens.append(a + b)
        self.token_ids = {tok: i for i, tok in enumerate(self.tokens)}
        self._ranks = {}
        for rank, (a, b) in enumerate(self.merges):
            pair = (self.token_ids[a], self.token_ids[b])
            self._ranks[pair] = (rank, self.token_ids[a + b])

    @property
    def size(self):
        return len(self.tokens)


def train_bpe(corpus, num_merges):
    """Greedy most-frequent-pair merges; ties break lexicographically.

    Deterministic for a given corpus and merge budget. Stops early (logged)
    once no adjacent pair remains.
    """
    texts = [t.lower() for t in corpus]
    if not texts:
        raise ContractError("train_bpe: empty corpus")
    weights = Counter(texts)
    seqs = [list(t.encode("utf-8")) for t in weights]
    counts = list(weights.values())

    tokens = [bytes([i]) for i in range(256)]
    merges = []
    pair_counts = Counter()
    where = {}
    for si, seq in enumerate(seqs):
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] += counts[si]
            where.setdefault(pair, set()).add(si)

    for step in range(num_merges):
        if not pair_counts:
            log.info("train_bpe: ran out of pairs after %d merges", step)
            break
        best = min(pair_counts,
                   key=lambda p: (-pair_counts[p], tokens[p[0]], tokens[p[1]]))
        new_id = len(tokens)
        tokens.append(tokens[best[0]] + tokens[best[1]])
        merges.append((tokens[best[0]], tokens[best[1]]))
        for si in sorted(where.get(best, ())):
            seq = seqs[si]
            if len(seq) < 2:
                continue
            w = counts[si]
            for pair in zip(seq, seq[1:]):
                pair_counts[pair] -= w
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
            merged = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and (seq[i], seq[i + 1]) == best:
                    merged.append(new_id)
                    i += 2
                else:
                    merged.append(seq[i])
                    i += 1
            seqs[si] = merged
            for pair in zip(merged, merged[1:]):
                pair_counts[pair] += w
                where.setdefault(pair, set()).add(si)
    return BpeVocab(merges=merges)


def encode(text, vocab):
    """Token ids for the lowercased text, applying merges in rank order."""
    ids = list(text.lower().encode("utf-8"))
    ranks = vocab._ranks
    while len(ids) > 1:
        best_rank = None
        best_pair = None
        for pair in zip(ids, ids[1:]):
            entry = ranks.get(pair)
            if entry is not None and (best_rank is None or entry[0] < best_rank):
                best_rank, best_pair = entry[0], pair
        if best_pair is None:
            break
        new_id = ranks[best_pair][1]
        merged = []
        i = 0
        while i < len(ids):
            if i + 1 < len(ids) and (ids[i], ids[i + 1]) == best_pair:
                merged.append(new_id)
                i += 2
            else:
                merged.append(ids[i])
                i += 1
        ids = merged
    return ids


def decode(ids, vocab):
    """Text for a content-id sequence; exact inverse of encode."""
    out = bytearray()
    for i, tid in enumerate(ids):
        tid = int(tid)
        if not 0 <= tid < vocab.size:
            raise ContractError(
                f"decode: id {tid} at position {i} outside vocab [0, {vocab.size})")
        out.extend(vocab.tokens[tid])
    return out.decode("utf-8", errors="replace")


def pad_code(ids, vocab_size, slots=N_TEXT):
    """Fixed-width code: content ids, then positional pads vocab_size + j."""
    ids = [int(v) for v in ids]
    if len(ids) > slots:
        raise CapacityError(
            f"pad_code: {len(ids)} ids exceed the {slots}-slot code width")
    code = np.empty(slots, dtype=np.int64)
    code[:len(ids)] = ids
    for j in range(len(ids), slots):
        code[j] = vocab_size + j
    return code


def strip_pads(code, vocab_size):
    """Content prefix of a padded code (everything before the first pad id)."""
    ids = []
    for v in np.asarray(code).tolist():
        if v >= vocab_size:
            break
        ids.append(int(v))
    return ids


def text_vocab_width(vocab_size, slots=N_TEXT):
    """Width of the padded-text id space: content ids plus positional pads."""
    return vocab_size + slots


# ---------------------------------------------------------------------------
# vocab files
# ---------------------------------------------------------------------------

def save_vocab(path, vocab):
    payload = {
        "alphabet": [bytes([i]).decode("latin-1") for i in range(256)],
        "merges": [[a.decode("latin-1"), b.decode("latin-1")]
                   for a, b in vocab.merges],
        "size": vocab.size,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=True)


def load_vocab(path):
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as err:
            raise FileFormatError(f"{path}: not valid JSON ({err})")
    for key in ("alphabet", "merges", "size"):
        if key not in payload:
            raise FileFormatError(f"{path}: missing {key!r}")
    if len(payload["alphabet"]) != 256:
        raise FileFormatError(f"{path}: alphabet must hold all 256 byte values")
    merges = [(a.encode("latin-1"), b.encode("latin-1"))
              for a, b in payload["merges"]]
    vocab = BpeVocab(merges=merges)
    if vocab.size != payload["size"]:
        raise FileFormatError(
            f"{path}: size {payload['size']} disagrees with merges "
            f"({vocab.size})")
    return vocab
