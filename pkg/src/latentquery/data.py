"""Corpus ingestion and the synthetic query-copy corpus.

Synthetic documents are filler words with a few marked spans.  A span is a
marker word (``one`` ... ``twelve``) followed by content words.  Markers
``one``-``four`` are *key* markers.  The generic summary copies
``summary_spans`` spans: each is a key-marker span, except that with
probability ``offkey_rate`` it is a span with a plain marker instead.  The
document thus says which spans are likely but only the summary says which
one was used.  Weak labels derived from the summary carry information the
document does not, and the decoder learns to copy whatever the
query-focused view marks rather than whatever carries a key marker.  The query-focused split names the markers of
non-key spans; its reference is those spans.
"""
from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import ConfigError

log = logging.getLogger(__name__)

MARKERS = ("one", "two", "three", "four", "five", "six", "seven", "eight",
           "nine", "ten", "eleven", "twelve")
N_KEY_MARKERS = 4
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


class DataError(ValueError):
    pass


@dataclass
class SummarizationExample:
    id: str
    document: str
    summary: str | None = None
    query: str | None = None
    mask: list[int] | None = None  # word-level ground-truth query mask (synthetic only)

    def to_json(self) -> dict:
        d = {"id": self.id, "document": self.document}
        for k in ("query", "summary", "mask"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return d


def validate_example(ex: SummarizationExample, training: bool = True) -> None:
    if not ex.document or not ex.document.strip():
        raise DataError(f"example {ex.id}: empty document")
    if training and (ex.summary is None or not ex.summary.strip()):
        raise DataError(f"example {ex.id}: empty summary")


@dataclass
class RawCluster:
    id: str
    documents: list[str]
    query: str = ""
    summary: str | None = None


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_corpus(path, examples) -> None:
    lines = [json.dumps(e.to_json() if isinstance(e, SummarizationExample) else e, ensure_ascii=False)
             for e in examples]
    _atomic_write(path, "".join(line + "\n" for line in lines))


def _read_text(path: Path) -> str:
    try:
        return path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: invalid UTF-8 at byte {exc.start}") from exc
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc


def load_jsonl(path, strict: bool = False) -> list[SummarizationExample]:
    path = Path(path)
    text = _read_text(path)
    out = []
    for ln, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            if not isinstance(row, dict):
                raise DataError("row is not an object")
            doc = row.get("document")
            if not isinstance(doc, str) or not doc.strip():
                raise DataError("missing or empty 'document'")
            ex = SummarizationExample(
                id=str(row.get("id", ln)), document=doc,
                summary=row.get("summary"), query=row.get("query") or None,
                mask=row.get("mask"))
        except (json.JSONDecodeError, DataError) as exc:
            msg = f"{path}:{ln}: malformed row ({exc})"
            if strict:
                raise DataError(msg) from exc
            log.warning("%s; skipped", msg)
            continue
        out.append(ex)
    if not out:
        log.warning("%s: no examples loaded", path)
    return out


def load_cluster_dir(path) -> list[RawCluster]:
    """One sub-directory per cluster: document files plus ``query.txt``."""
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    clusters = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        docs = [_read_text(f) for f in sorted(sub.iterdir())
                if f.is_file() and f.name not in ("query.txt", "summary.txt")]
        query_file = sub / "query.txt"
        query = _read_text(query_file).strip() if query_file.exists() else ""
        summary_file = sub / "summary.txt"
        summary = _read_text(summary_file).strip() if summary_file.exists() else None
        if docs:
            clusters.append(RawCluster(sub.name, docs, query, summary))
    return clusters


def load_cluster_jsonl(path, strict: bool = False) -> list[RawCluster]:
    path = Path(path)
    out = []
    for ln, line in enumerate(_read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            docs = row["documents"]
            if not isinstance(docs, list) or not docs:
                raise DataError("'documents' must be a non-empty list")
        except (json.JSONDecodeError, KeyError, TypeError, DataError) as exc:
            msg = f"{path}:{ln}: malformed cluster row ({exc})"
            if strict:
                raise DataError(msg) from exc
            log.warning("%s; skipped", msg)
            continue
        out.append(RawCluster(str(row.get("id", ln)), [str(d) for d in docs], row.get("query") or "",
                              row.get("summary")))
    return out


def load_corpus(path, format: str = "jsonl", strict: bool = False):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file or directory")
    if format == "jsonl":
        return load_jsonl(path, strict)
    if format == "cluster_dir":
        return load_cluster_dir(path)
    if format == "cluster_jsonl":
        return load_cluster_jsonl(path, strict)
    raise DataError(f"unknown corpus format {format!r}")


# ---------------------------------------------------------------------------
# synthetic query-copy corpus
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    vocab_size: int = 40          # content words
    filler_size: int = 30         # filler words
    doc_length: tuple[int, int] = (28, 40)  # words
    n_spans: int = 4              # marked spans per document
    n_key_spans: int = 1          # spans with a key marker
    summary_spans: tuple[int, int] = (1, 2)  # spans copied into the generic summary
    offkey_rate: float = 0.3      # chance a summary span has a plain marker
    phrases: int = 24             # fixed span phrases; 0 draws span words freely
    span_length: tuple[int, int] = (2, 4)   # content words after the marker
    query_spans: int = 1          # spans named by a query-focused query
    noise_rate: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.span_length
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad span_length {self.span_length}")
        if self.doc_length[0] < 1 or self.doc_length[1] < self.doc_length[0]:
            raise ConfigError(f"bad doc_length {self.doc_length}")
        lo_s, hi_s = self.summary_spans
        if not 0 <= lo_s <= hi_s <= self.n_spans:
            raise ConfigError(f"bad summary_spans {self.summary_spans}")
        if self.phrases and self.phrases > self.vocab_size:
            raise ConfigError("need at least one content word per phrase (distinct first words)")
        if self.n_key_spans > min(N_KEY_MARKERS, self.n_spans):
            raise ConfigError("more key spans than key markers or spans")
        if self.n_spans - self.n_key_spans > len(MARKERS) - N_KEY_MARKERS:
            raise ConfigError("not enough plain markers for the requested spans")
        needed = self.n_spans * (hi + 1) + max(self.n_spans - 1, 0)
        if needed > self.doc_length[0]:
            raise ConfigError(f"infeasible spec: {self.n_spans} spans of up to {hi + 1} words "
                              f"need {needed} words but documents may be {self.doc_length[0]} long")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigError("noise_rate must be in [0, 1]")
        if not 0.0 <= self.offkey_rate <= 1.0:
            raise ConfigError("offkey_rate must be in [0, 1]")
        if self.query_spans > self.n_spans - self.n_key_spans and self.query_spans > 0:
            raise ConfigError("query_spans exceeds the number of non-key spans")


def _lexicon(n: int, rng: np.random.Generator, taken: set[str]) -> list[str]:
    words = []
    while len(words) < n:
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(2))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


@dataclass
class SyntheticDocument:
    id: str
    words: list[str]
    spans: list[tuple[int, int, str]]  # (start, end exclusive, marker)
    key_spans: list[int]               # indices into spans with a key marker
    summary_span_idx: list[int]        # spans copied into the summary
    summary: str
    mask: list[int]                    # word-level mask of the summary spans

    def span_text(self, i: int) -> str:
        s, e, _ = self.spans[i]
        return " ".join(self.words[s:e])

    def span_mask(self, idx) -> list[int]:
        m = [0] * len(self.words)
        for i in idx:
            s, e, _ = self.spans[i]
            m[s:e] = [1] * (e - s)
        return m

    @property
    def document(self) -> str:
        return " ".join(self.words)


def lexicons(seed: int, spec: SyntheticSpec) -> tuple[list[str], list[str]]:
    rng = np.random.default_rng([seed, 7])
    taken = set(MARKERS)
    return _lexicon(spec.vocab_size, rng, taken), _lexicon(spec.filler_size, rng, taken)


def phrase_inventory(seed: int, spec: SyntheticSpec, content: list[str]) -> list[list[str]]:
    """``spec.phrases`` fixed word sequences with pairwise distinct first words."""
    rng = np.random.default_rng([seed, 8])
    firsts = rng.choice(len(content), spec.phrases, replace=False)
    out = []
    for f in firsts:
        n = int(rng.integers(spec.span_length[0], spec.span_length[1] + 1))
        rest = [i for i in rng.permutation(len(content)) if i != f][:n - 1]
        out.append([content[int(f)]] + [content[int(i)] for i in rest])
    return out


def generate_documents(spec: SyntheticSpec, n: int, split: str = "train") -> list[SyntheticDocument]:
    spec.validate()
    if n < 1:
        raise ConfigError("need at least one example")
    content, filler = lexicons(spec.seed, spec)
    phrases = phrase_inventory(spec.seed, spec, content) if spec.phrases else None
    rng = np.random.default_rng([spec.seed, sum(map(ord, split))])
    key_markers = list(MARKERS[:N_KEY_MARKERS])
    plain_markers = list(MARKERS[N_KEY_MARKERS:])
    docs = []
    for k in range(n):
        length = int(rng.integers(spec.doc_length[0], spec.doc_length[1] + 1))
        if phrases:
            bodies = [phrases[int(i)] for i in rng.choice(len(phrases), spec.n_spans, replace=False)]
        else:
            bodies = [[str(w) for w in rng.choice(content, int(rng.integers(spec.span_length[0],
                                                                            spec.span_length[1] + 1)),
                                                   replace=False)]
                      for _ in range(spec.n_spans)]
        spans_len = [len(b) + 1 for b in bodies]
        n_fill = length - sum(spans_len)
        # distribute filler into n_spans + 1 gaps, inner gaps at least one word
        inner = max(spec.n_spans - 1, 0)
        extra = n_fill - inner
        cuts = np.sort(rng.integers(0, extra + 1, size=spec.n_spans))
        gaps = np.diff(np.concatenate([[0], cuts, [extra]])).tolist()
        for g in range(1, spec.n_spans):
            gaps[g] += 1
        markers = list(rng.choice(key_markers, spec.n_key_spans, replace=False)) + \
            list(rng.choice(plain_markers, spec.n_spans - spec.n_key_spans, replace=False))
        order = rng.permutation(spec.n_spans)
        words: list[str] = []
        spans = []
        key_idx = []
        for s in range(spec.n_spans):
            words += list(rng.choice(filler, gaps[s]))
            marker = str(markers[order[s]])
            start = len(words)
            words.append(marker)
            words += bodies[s]
            spans.append((start, len(words), marker))
            if order[s] < spec.n_key_spans:
                key_idx.append(s)
        words += list(rng.choice(filler, gaps[spec.n_spans]))
        words = [str(w) for w in words]
        keys = list(key_idx)
        plain = [i for i in range(spec.n_spans) if i not in key_idx]
        chosen = []
        for _ in range(int(rng.integers(spec.summary_spans[0], spec.summary_spans[1] + 1))):
            pool = plain if (plain and rng.random() < spec.offkey_rate) or not keys else keys
            pick = int(pool.pop(int(rng.integers(len(pool)))))
            chosen.append(pick)
        chosen.sort()
        summary_words = []
        for i in chosen:
            s, e, _ = spans[i]
            summary_words += words[s:e]
        summary_words = [str(rng.choice(content)) if rng.random() < spec.noise_rate else w
                         for w in summary_words]
        doc = SyntheticDocument(f"{split}-{k}", words, spans, key_idx, chosen, " ".join(summary_words), [])
        doc.mask = doc.span_mask(chosen)
        docs.append(doc)
    return docs


def generate_synthetic(spec: SyntheticSpec, n: int, split: str = "train",
                       with_queries: bool = False) -> list[SummarizationExample]:
    """Labeled synthetic corpus.

    Generic rows carry no query and summarize randomly chosen spans.  With
    ``with_queries`` each row instead names ``query_spans`` non-key spans by
    their markers and the summary is exactly those spans.
    """
    docs = generate_documents(spec, n, split)
    rng = np.random.default_rng([spec.seed, 99, sum(map(ord, split))])
    out = []
    for d in docs:
        if with_queries:
            qfs = query_variants(d, spec.query_spans, rng, count=1)[0]
            out.append(qfs)
        else:
            out.append(SummarizationExample(d.id, d.document, d.summary, None, d.mask))
    return out


def query_variants(doc: SyntheticDocument, k: int, rng: np.random.Generator,
                   count: int = 2) -> list[SummarizationExample]:
    """``count`` query-focused versions of ``doc`` with distinct span choices."""
    others = [i for i in range(len(doc.spans)) if i not in doc.key_spans]
    out = []
    chosen_sets: list[tuple[int, ...]] = []
    perm = list(rng.permutation(others))
    for c in range(count):
        pick = tuple(sorted(perm[(c * k + j) % len(perm)] for j in range(k)))
        chosen_sets.append(pick)
        query = " ".join(doc.spans[i][2] for i in pick)
        summary = " ".join(doc.span_text(i) for i in pick)
        out.append(SummarizationExample(f"{doc.id}-q{c}", doc.document, summary, query,
                                        doc.span_mask(pick)))
    return out


def spec_from_dict(d: dict) -> SyntheticSpec:
    d = dict(d)
    for key in ("doc_length", "span_length", "summary_spans"):
        if key in d:
            d[key] = tuple(d[key])
    return SyntheticSpec(**d)


def spec_to_dict(spec: SyntheticSpec) -> dict:
    return asdict(spec)
