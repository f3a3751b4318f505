"""Document-network ingestion, fold splitting and training-pair construction.

Input files follow the LINQS layout: a ``.content`` file with one document
per line (``id<TAB>w_1 ... w_V<TAB>label``, binary word indicators) and a
``.cites`` file with one ``cited<TAB>citing`` record per line.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

logger = logging.getLogger(__name__)

CORPUS_FORMAT_VERSION = 1


class CorpusFormatError(ValueError):
    """Malformed dataset file."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


@dataclass
class Document:
    external_id: str
    tokens: np.ndarray
    label: str | None = None

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64).reshape(-1)

    def __len__(self):
        return self.tokens.shape[0]


@dataclass
class CitesReport:
    """Counters from reading a citation file."""

    records: int = 0
    kept: int = 0
    unknown_id: int = 0
    duplicate: int = 0
    self_link: int = 0

    def merge(self, other: "CitesReport") -> "CitesReport":
        return CitesReport(*(getattr(self, f) + getattr(other, f) for f in self.__dataclass_fields__))


@dataclass
class Corpus:
    docs: list[Document]
    vocab_size: int
    links: frozenset = field(default_factory=frozenset)
    directed: bool = True

    def __post_init__(self):
        self.links = frozenset((int(i), int(j)) for i, j in self.links)
        self.validate()

    def validate(self):
        n = len(self.docs)
        for d in self.docs:
            if len(d) and (d.tokens.min() < 0 or d.tokens.max() >= self.vocab_size):
                raise CorpusFormatError(f"document {d.external_id!r} has a token id outside [0, {self.vocab_size})")
        for i, j in self.links:
            if i == j:
                raise CorpusFormatError(f"self-link ({i}, {i})")
            if not (0 <= i < n and 0 <= j < n):
                raise CorpusFormatError(f"link ({i}, {j}) references a missing document")
        if not self.directed:
            for i, j in self.links:
                if i > j:
                    raise CorpusFormatError("undirected links must be stored as (min, max)")

    @property
    def n_docs(self) -> int:
        return len(self.docs)

    @property
    def n_tokens(self) -> int:
        return int(sum(len(d) for d in self.docs))

    def doc_lengths(self) -> np.ndarray:
        return np.array([len(d) for d in self.docs], dtype=np.int64)

    def link_array(self) -> np.ndarray:
        if not self.links:
            return np.empty((0, 2), dtype=np.int64)
        return np.array(sorted(self.links), dtype=np.int64)

    def has_link(self, i: int, j: int) -> bool:
        if self.directed:
            return (i, j) in self.links
        return (min(i, j), max(i, j)) in self.links

    def as_undirected(self) -> "Corpus":
        links = {(min(i, j), max(i, j)) for i, j in self.links}
        return Corpus(self.docs, self.vocab_size, links, directed=False)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def parse_content(stream: TextIO | Iterable[str], source: str | None = None, vocab_size: int | None = None):
    """Parse a ``.content`` stream.

    Returns ``(docs, vocab_size, id_map)`` where ``id_map`` maps external ids
    to dense indices in file order.  Every indicator equal to 1 contributes
    one token with that column's word id.
    """
    docs: list[Document] = []
    id_map: dict[str, int] = {}
    ncols = None
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            parts = line.split()
        if len(parts) < 3:
            raise CorpusFormatError("expected id, word indicators and label", lineno, source)
        if ncols is None:
            ncols = len(parts)
            if vocab_size is not None and ncols - 2 != vocab_size:
                raise CorpusFormatError(f"expected {vocab_size} word columns, found {ncols - 2}", lineno, source)
        elif len(parts) != ncols:
            raise CorpusFormatError(f"expected {ncols} columns, found {len(parts)}", lineno, source)
        ext_id = parts[0].strip()
        cols = parts[1:-1]
        try:
            ind = np.array(cols, dtype=np.int64)
        except ValueError:
            raise CorpusFormatError("word indicators must be 0 or 1", lineno, source) from None
        if ((ind != 0) & (ind != 1)).any():
            raise CorpusFormatError("word indicators must be 0 or 1", lineno, source)
        if ext_id in id_map:
            raise CorpusFormatError(f"duplicate document id {ext_id!r}", lineno, source)
        id_map[ext_id] = len(docs)
        docs.append(Document(ext_id, np.flatnonzero(ind), parts[-1].strip() or None))
    if ncols is None:
        return docs, (vocab_size or 0), id_map
    return docs, ncols - 2, id_map


def parse_cites(stream: TextIO | Iterable[str], id_map: dict[str, int], directed: bool = True,
                source: str | None = None, existing: set | None = None):
    """Parse a ``.cites`` stream into ``(links, CitesReport)``.

    A record ``cited citing`` becomes the ordered pair (citing, cited).
    Records naming unknown ids, self-links and duplicates are dropped and
    counted.
    """
    links: set = set() if existing is None else existing
    report = CitesReport()
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise CorpusFormatError("expected two document ids", lineno, source)
        report.records += 1
        cited, citing = parts
        if cited not in id_map or citing not in id_map:
            report.unknown_id += 1
            continue
        i, j = id_map[citing], id_map[cited]
        if i == j:
            report.self_link += 1
            continue
        pair = (i, j) if directed else (min(i, j), max(i, j))
        if pair in links:
            report.duplicate += 1
            continue
        links.add(pair)
        report.kept += 1
    if report.unknown_id:
        logger.warning("skipped %d citation records with unknown ids", report.unknown_id)
    return links, report


def load_linqs(content_paths: str | Sequence[str], cites_paths: str | Sequence[str], directed: bool = True):
    """Read one or more LINQS content/cites file pairs into a single corpus.

    Several pairs (the WebKB sites) share a vocabulary and are concatenated.
    Returns ``(corpus, CitesReport)``.
    """
    if isinstance(content_paths, (str, os.PathLike)):
        content_paths = [content_paths]
    if isinstance(cites_paths, (str, os.PathLike)):
        cites_paths = [cites_paths]
    docs: list[Document] = []
    id_map: dict[str, int] = {}
    vocab_size = None
    for path in content_paths:
        with open(path, encoding="utf-8") as fh:
            part, v, _ = parse_content(fh, source=str(path), vocab_size=vocab_size)
        vocab_size = v
        for d in part:
            if d.external_id in id_map:
                raise CorpusFormatError(f"document id {d.external_id!r} appears in more than one file", source=str(path))
            id_map[d.external_id] = len(docs)
            docs.append(d)
    links: set = set()
    report = CitesReport()
    for path in cites_paths:
        with open(path, encoding="utf-8") as fh:
            _, r = parse_cites(fh, id_map, directed=directed, source=str(path), existing=links)
        report = report.merge(r)
    return Corpus(docs, vocab_size or 0, links, directed=directed), report


def write_content(corpus: Corpus, stream: TextIO):
    for d in corpus.docs:
        row = np.zeros(corpus.vocab_size, dtype=np.int64)
        row[d.tokens] = 1
        stream.write("\t".join([d.external_id, *map(str, row.tolist()), d.label or ""]) + "\n")


def write_cites(corpus: Corpus, stream: TextIO):
    for i, j in sorted(corpus.links):
        stream.write(f"{corpus.docs[j].external_id}\t{corpus.docs[i].external_id}\n")


def save_corpus(corpus: Corpus, path: str):
    payload = {
        "format": "grtm-corpus",
        "version": CORPUS_FORMAT_VERSION,
        "vocab_size": corpus.vocab_size,
        "directed": corpus.directed,
        "docs": [{"id": d.external_id, "tokens": d.tokens.tolist(), "label": d.label} for d in corpus.docs],
        "links": [list(p) for p in sorted(corpus.links)],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_corpus(path: str) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "grtm-corpus":
        raise CorpusFormatError("not a corpus cache file", source=path)
    if payload.get("version") != CORPUS_FORMAT_VERSION:
        raise CorpusFormatError(f"unsupported corpus cache version {payload.get('version')}", source=path)
    docs = [Document(d["id"], d["tokens"], d["label"]) for d in payload["docs"]]
    return Corpus(docs, payload["vocab_size"], {tuple(p) for p in payload["links"]}, payload["directed"])


# ---------------------------------------------------------------------------
# folds and training pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSplit:
    train_doc_ids: frozenset
    test_doc_ids: frozenset
    fold_index: int

    def train_array(self) -> np.ndarray:
        return np.array(sorted(self.train_doc_ids), dtype=np.int64)

    def test_array(self) -> np.ndarray:
        return np.array(sorted(self.test_doc_ids), dtype=np.int64)


def split_folds(corpus: Corpus | int, n_folds: int, seed) -> list[FoldSplit]:
    """Partition a random permutation of the documents into ``n_folds`` test sets."""
    n = corpus if isinstance(corpus, (int, np.integer)) else corpus.n_docs
    if n_folds < 2 or n_folds > n:
        raise ValueError(f"n_folds must be in [2, {n}], got {n_folds}")
    perm = np.random.default_rng(seed).permutation(n)
    everything = frozenset(range(n))
    folds = []
    for f, chunk in enumerate(np.array_split(perm, n_folds)):
        test = frozenset(int(x) for x in chunk)
        folds.append(FoldSplit(everything - test, test, f))
    return folds


@dataclass
class TrainPairSet:
    """Labelled document pairs (src, dst, y, c), stored column-wise."""

    src: np.ndarray
    dst: np.ndarray
    y: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        self.dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        n = self.src.shape[0]
        if not (self.dst.shape[0] == self.y.shape[0] == self.c.shape[0] == n):
            raise ValueError("pair columns differ in length")
        if n and (self.src == self.dst).any():
            raise ValueError("a pair links a document to itself")
        if n and not np.isin(self.y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if n and not (self.c > 0).all():
            raise ValueError("per-pair costs must be positive")

    @classmethod
    def from_tuples(cls, pairs: Iterable[tuple]) -> "TrainPairSet":
        pairs = list(pairs)
        if not pairs:
            return cls.empty()
        src, dst, y, c = zip(*pairs)
        return cls(src, dst, y, c)

    @classmethod
    def empty(cls) -> "TrainPairSet":
        return cls(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))

    def __len__(self):
        return self.src.shape[0]

    def __iter__(self):
        for p in range(len(self)):
            yield int(self.src[p]), int(self.dst[p]), int(self.y[p]), float(self.c[p])

    @property
    def n_positive(self) -> int:
        return int(self.y.sum())


def _ordered_pair_from_code(code: np.ndarray, n: int):
    i = code // (n - 1)
    r = code % (n - 1)
    j = np.where(r < i, r, r + 1)
    return i, j


def _ordered_code(i, j, n):
    return i * (n - 1) + np.where(j < i, j, j - 1)


def _unordered_pair_from_code(code: np.ndarray, n: int):
    # row-major enumeration of i < j
    code = np.asarray(code, dtype=np.int64)
    total = n * (n - 1) // 2
    rev = total - 1 - code
    m = ((np.sqrt(8.0 * rev + 1) - 1) // 2).astype(np.int64)
    # guard against floating error in the square root
    m = np.where((m + 1) * (m + 2) // 2 <= rev, m + 1, m)
    m = np.where(m * (m + 1) // 2 > rev, m - 1, m)
    i = n - 2 - m
    row_start = i * (2 * n - i - 1) // 2
    j = code - row_start + i + 1
    return i, j


def _unordered_code(i, j, n):
    return i * (2 * n - i - 1) // 2 + (j - i - 1)


def build_train_pairs(corpus: Corpus, train_doc_ids, neg_ratio: float, c_pos: float, c_neg: float, seed,
                      min_tokens: int = 1) -> TrainPairSet:
    """Positive links among training documents plus subsampled negatives.

    Negatives are drawn uniformly without replacement from the unobserved
    train-train pairs (ordered when the corpus is directed, ``(min, max)``
    otherwise); their number is ``round(neg_ratio * #candidates)``.
    Documents with fewer than ``min_tokens`` tokens are left out of every
    pair.
    """
    if not (0 < neg_ratio <= 1):
        raise ValueError(f"neg_ratio must lie in (0, 1], got {neg_ratio}")
    if not (c_pos > 0 and c_neg > 0):
        raise ValueError("c_pos and c_neg must be positive")
    ids = np.array(sorted(int(x) for x in train_doc_ids), dtype=np.int64)
    lengths = corpus.doc_lengths()[ids] if ids.size else np.empty(0, np.int64)
    empty = ids[lengths < min_tokens]
    if empty.size:
        logger.warning("%d training documents without tokens are excluded from the pair set", empty.size)
        ids = ids[lengths >= min_tokens]
    n = ids.shape[0]
    if n < 2:
        logger.warning("fewer than two usable training documents; empty pair set")
        return TrainPairSet.empty()
    local = {int(g): k for k, g in enumerate(ids)}
    pos = [(local[i], local[j]) for i, j in corpus.links if i in local and j in local]
    pos.sort()
    if not pos:
        logger.warning("no positive links inside the training set")
    pos_arr = np.array(pos, dtype=np.int64).reshape(-1, 2)

    if corpus.directed:
        total = n * (n - 1)
        pos_codes = _ordered_code(pos_arr[:, 0], pos_arr[:, 1], n)
        decode = _ordered_pair_from_code
    else:
        total = n * (n - 1) // 2
        pos_codes = _unordered_code(pos_arr[:, 0], pos_arr[:, 1], n)
        decode = _unordered_pair_from_code
    pos_codes = np.sort(pos_codes)
    n_cand = total - pos_codes.shape[0]
    n_neg = int(round(neg_ratio * n_cand))
    rng = np.random.default_rng(seed)
    ranks = np.sort(rng.choice(n_cand, size=n_neg, replace=False)) if n_neg else np.empty(0, np.int64)
    # map the r-th unobserved code to its absolute code by skipping positives
    shifted = pos_codes - np.arange(pos_codes.shape[0])
    neg_codes = ranks + np.searchsorted(shifted, ranks, side="right")
    ni, nj = decode(neg_codes, n)

    src = np.concatenate([ids[pos_arr[:, 0]], ids[ni]])
    dst = np.concatenate([ids[pos_arr[:, 1]], ids[nj]])
    y = np.concatenate([np.ones(len(pos), np.int64), np.zeros(n_neg, np.int64)])
    c = np.concatenate([np.full(len(pos), float(c_pos)), np.full(n_neg, float(c_neg))])
    return TrainPairSet(src, dst, y, c)


def count_negative_candidates(corpus: Corpus, train_doc_ids) -> int:
    ids = set(int(x) for x in train_doc_ids)
    n = len(ids)
    total = n * (n - 1) if corpus.directed else n * (n - 1) // 2
    n_pos = sum(1 for i, j in corpus.links if i in ids and j in ids)
    return total - n_pos

