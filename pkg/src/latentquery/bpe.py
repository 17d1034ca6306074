"""Trainable byte-pair encoding over characters with a word-boundary marker.

Pre-tokenization splits text into whitespace-delimited words.  A word that
follows exactly one space starts with the boundary symbol ``▁`` (which
stands for that space); any other whitespace is kept as literal
single-character units that never merge.  With ``prefix_space=True`` a
virtual space is put in front of the text so that the first word is marked
like every other word; decoding removes it again.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

MARKER = "▁"
_TOKEN_RE = re.compile(r"(\s*)(\S+)|(\s+)$")
HEADER = "#bpe-merges v1"


class BpeConfigError(ValueError):
    pass


class BpeInvariantError(ValueError):
    pass


@dataclass(frozen=True)
class BpeSequence:
    ids: tuple[int, ...]
    surfaces: tuple[str, ...]
    word_index: tuple[int, ...]
    prefix_space: bool = False

    def __post_init__(self):
        if not (len(self.ids) == len(self.surfaces) == len(self.word_index)):
            raise BpeInvariantError(
                f"parallel lists differ in length: ids={len(self.ids)}, "
                f"surfaces={len(self.surfaces)}, word_index={len(self.word_index)}")

    def __len__(self) -> int:
        return len(self.ids)

    def truncate(self, n: int) -> "BpeSequence":
        return BpeSequence(self.ids[:n], self.surfaces[:n], self.word_index[:n], self.prefix_space)


def _pretokenize(text: str, prefix_space: bool):
    """Yield ``(kind, payload, word_idx)`` with kind in {"ws", "word"}."""
    if prefix_space:
        text = " " + text
    word = -1
    pending_ws: list[str] = []
    for m in _TOKEN_RE.finditer(text):
        ws, tok, tail = m.group(1), m.group(2), m.group(3)
        if tok is None:
            pending_ws.extend(tail)
            continue
        word += 1
        marked = ws.endswith(" ")
        for ch in (ws[:-1] if marked else ws):
            yield "ws", ch, word
        yield "word", (MARKER if marked else "") + tok, word
    for ch in pending_ws:
        yield "ws", ch, max(word, 0)


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(word)


class MergeTable:
    """Ordered merge rules plus the unit <-> id map.

    Immutable after construction.  Characters not in the base vocabulary get
    ids in an overflow range above ``vocab_size`` derived from their code
    point, so unseen text still encodes deterministically.
    """

    def __init__(self, base_vocab, merges):
        base = list(dict.fromkeys(base_vocab))
        merges = [tuple(m) for m in merges]
        if len(set(merges)) != len(merges):
            raise BpeConfigError("duplicate merge rules")
        self.base_vocab: tuple[str, ...] = tuple(base)
        self.merges: tuple[tuple[str, str], ...] = tuple(merges)
        units = list(base)
        for a, b in merges:
            if a + b not in units:
                units.append(a + b)
        self.units: tuple[str, ...] = tuple(units)
        self._id = {u: i for i, u in enumerate(units)}
        self._rank = {m: r for r, m in enumerate(merges)}
        self._cache: dict[str, tuple[str, ...]] = {}

    @property
    def vocab_size(self) -> int:
        return len(self.units)

    def __eq__(self, other):
        return isinstance(other, MergeTable) and self.base_vocab == other.base_vocab and self.merges == other.merges

    def __hash__(self):
        return hash((self.base_vocab, self.merges))

    def unit_id(self, unit: str) -> int:
        i = self._id.get(unit)
        if i is not None:
            return i
        if len(unit) == 1:
            return self.vocab_size + ord(unit)
        raise KeyError(unit)

    def id_to_unit(self, i: int) -> str:
        if i < self.vocab_size:
            return self.units[i]
        return chr(i - self.vocab_size)

    def segment(self, word: str) -> tuple[str, ...]:
        """Apply merges in rule order to one pre-tokenized word."""
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        symbols = list(_word_symbols(word))
        rank = self._rank
        while len(symbols) > 1:
            best = None
            best_rank = None
            for k in range(len(symbols) - 1):
                r = rank.get((symbols[k], symbols[k + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = k, r
            if best is None:
                break
            a, b = symbols[best], symbols[best + 1]
            merged: list[str] = []
            k = 0
            while k < len(symbols):
                if k < len(symbols) - 1 and symbols[k] == a and symbols[k + 1] == b:
                    merged.append(a + b)
                    k += 2
                else:
                    merged.append(symbols[k])
                    k += 1
            symbols = merged
        out = tuple(symbols)
        if len(self._cache) < 200_000:
            self._cache[word] = out
        return out

    # -- serialization ----------------------------------------------------
    def to_text(self) -> str:
        lines = [HEADER, "base " + " ".join(_escape(u) for u in self.base_vocab)]
        lines += [f"{_escape(a)} {_escape(b)}" for a, b in self.merges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MergeTable":
        lines = text.splitlines()
        if not lines or lines[0] != HEADER or not lines[1].startswith("base"):
            raise BpeConfigError("not a merge-table file")
        base = [_unescape(u) for u in lines[1].split(" ")[1:] if u]
        merges = []
        for ln, line in enumerate(lines[2:], start=3):
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise BpeConfigError(f"line {ln}: expected two units, got {line!r}")
            merges.append((_unescape(parts[0]), _unescape(parts[1])))
        return cls(base, merges)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MergeTable":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _escape(u: str) -> str:
    return u.encode("unicode_escape").decode("ascii").replace(" ", "\\x20")


def _unescape(u: str) -> str:
    return u.encode("ascii").decode("unicode_escape")


def train_bpe(corpus, num_merges: int) -> MergeTable:
    """Greedy most-frequent-pair merging; ties go to the smallest pair."""
    corpus = list(corpus)
    if not corpus:
        raise BpeConfigError("cannot train BPE on an empty corpus")
    if num_merges < 0:
        raise BpeConfigError(f"num_merges must be >= 0, got {num_merges}")
    words: Counter[str] = Counter()
    base: set[str] = set()
    for text in corpus:
        for kind, payload, _ in _pretokenize(text, prefix_space=True):
            if kind == "word":
                words[payload] += 1
            base.update(payload)
    vocab = {tuple(w): c for w, c in words.items()}
    merges: list[tuple[str, str]] = []
    pairs: Counter[tuple[str, str]] = Counter()
    for sym, c in vocab.items():
        for k in range(len(sym) - 1):
            pairs[sym[k], sym[k + 1]] += c
    for _ in range(num_merges):
        pairs = +pairs
        if not pairs:
            break
        top = max(pairs.values())
        best = min(p for p, c in pairs.items() if c == top)
        merges.append(best)
        a, b = best
        new_vocab = {}
        for sym, c in vocab.items():
            if len(sym) < 2 or a not in sym:
                new_vocab[sym] = c
                continue
            out = []
            k = 0
            changed = False
            while k < len(sym):
                if k < len(sym) - 1 and sym[k] == a and sym[k + 1] == b:
                    out.append(a + b)
                    k += 2
                    changed = True
                else:
                    out.append(sym[k])
                    k += 1
            if changed:
                for j in range(len(sym) - 1):
                    pairs[sym[j], sym[j + 1]] -= c
                out = tuple(out)
                for j in range(len(out) - 1):
                    pairs[out[j], out[j + 1]] += c
                new_vocab[out] = new_vocab.get(out, 0) + c
            else:
                new_vocab[sym] = c
        vocab = new_vocab
    return MergeTable(sorted(base), merges)


def encode(text: str, table: MergeTable, prefix_space: bool = False) -> BpeSequence:
    ids: list[int] = []
    surfaces: list[str] = []
    widx: list[int] = []
    if not text:
        return BpeSequence((), (), (), prefix_space)
    for kind, payload, w in _pretokenize(text, prefix_space):
        units = (payload,) if kind == "ws" else table.segment(payload)
        for u in units:
            try:
                ids.append(table.unit_id(u))
                surfaces.append(u)
                widx.append(w)
            except KeyError:
                # multi-character unit unknown to the table cannot happen for
                # segment() output; fall back to characters defensively
                for ch in u:
                    ids.append(table.unit_id(ch))
                    surfaces.append(ch)
                    widx.append(w)
    return BpeSequence(tuple(ids), tuple(surfaces), tuple(widx), prefix_space)


def decode(seq: BpeSequence) -> str:
    if not (len(seq.ids) == len(seq.surfaces) == len(seq.word_index)):
        raise BpeInvariantError("inconsistent BpeSequence")
    text = "".join(seq.surfaces).replace(MARKER, " ")
    if seq.prefix_space and text:
        if not text.startswith(" "):
            raise BpeInvariantError("prefix_space sequence does not start with a boundary")
        text = text[1:]
    return text


def decode_ids(ids, table: MergeTable) -> str:
    """Text for a bare id list (model output); the leading boundary is dropped."""
    text = "".join(table.id_to_unit(int(i)) for i in ids).replace(MARKER, " ")
    return text[1:] if text.startswith(" ") else text
