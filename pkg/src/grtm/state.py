"""Hyperparameters, sampler state and the posterior point estimate."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Corpus, TrainPairSet

MODEL_FORMAT_VERSION = 1

LOSSES = ("logistic", "hinge")


@dataclass
class Hyperparams:
    """Model and prior settings.

    ``alpha`` and ``beta`` are either a scalar (symmetric prior) or a full
    vector of length K (resp. V).
    """

    K: int = 10
    alpha: float | Sequence[float] = 5.0
    beta: float | Sequence[float] = 0.01
    nu2: float = 1.0
    c_pos: float = 4.0
    c_neg: float = 1.0
    ell: float = 1.0
    loss: str = "logistic"
    full_matrix: bool = True
    burn_in: int = 400
    seed: int = 0

    def __post_init__(self):
        if not np.isscalar(self.alpha):
            self.alpha = tuple(float(a) for a in self.alpha)
        if not np.isscalar(self.beta):
            self.beta = tuple(float(b) for b in self.beta)
        self.validate()

    def validate(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")
        a = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if a.size not in (1, self.K) or not (a > 0).all():
            raise ValueError("alpha must be positive (scalar or length-K)")
        if not (np.asarray(self.beta, dtype=float) > 0).all():
            raise ValueError("beta must be positive")
        for name in ("nu2", "c_pos", "c_neg"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.loss == "hinge" and not self.ell >= 1:
            raise ValueError(f"the hinge cost ell must be >= 1, got {self.ell}")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")

    def alpha_vector(self) -> np.ndarray:
        a = np.asarray(self.alpha, dtype=np.float64)
        return np.full(self.K, float(a)) if a.ndim == 0 else a.copy()

    def beta_vector(self, vocab_size: int) -> np.ndarray:
        b = np.asarray(self.beta, dtype=np.float64)
        if b.ndim == 0:
            return np.full(vocab_size, float(b))
        if b.shape[0] != vocab_size:
            raise ValueError(f"beta has length {b.shape[0]}, vocabulary has {vocab_size} words")
        return b.copy()

    @property
    def eta_dim(self) -> int:
        return self.K * self.K if self.full_matrix else self.K

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("alpha", "beta"):
            if isinstance(d[key], tuple):
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(**d)


def eta_to_matrix(eta: np.ndarray, K: int, full_matrix: bool) -> np.ndarray:
    """U as a K x K matrix; ``eta`` concatenates the rows of U."""
    eta = np.asarray(eta, dtype=np.float64)
    if full_matrix:
        return eta.reshape(K, K).copy()
    return np.diag(eta)


def zbar_from_counts(doc_topic: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Row-normalised doc-topic counts; empty documents map to the zero vector."""
    doc_topic = np.asarray(doc_topic, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.float64)
    out = np.zeros_like(doc_topic)
    nz = lengths > 0
    out[nz] = doc_topic[nz] / lengths[nz, None]
    return out


def discriminant(eta, zbar_i, zbar_j, full_matrix: bool) -> float:
    """omega = zbar_i^T U zbar_j."""
    eta = np.asarray(eta, dtype=np.float64)
    zi = np.asarray(zbar_i, dtype=np.float64)
    zj = np.asarray(zbar_j, dtype=np.float64)
    if full_matrix:
        K = zi.shape[0]
        return float(zi @ eta.reshape(K, K) @ zj)
    return float(np.sum(eta * zi * zj))


def pair_features(zbar: np.ndarray, src: np.ndarray, dst: np.ndarray, full_matrix: bool) -> np.ndarray:
    """Rows vec(zbar_i zbar_j^T) (or zbar_i * zbar_j in diagonal mode)."""
    zi = zbar[src]
    zj = zbar[dst]
    if full_matrix:
        return (zi[:, :, None] * zj[:, None, :]).reshape(zi.shape[0], -1)
    return zi * zj


@dataclass
class PairCache:
    """Per-pair quantities and adjacency for the local (state) doc indices."""

    src: np.ndarray
    dst: np.ndarray
    y: np.ndarray
    c: np.ndarray
    kappa: np.ndarray
    ytilde: np.ndarray
    omega: np.ndarray
    out_ptr: np.ndarray
    out_pairs: np.ndarray
    in_ptr: np.ndarray
    in_pairs: np.ndarray

    @classmethod
    def build(cls, src, dst, y, c, n_docs: int) -> "PairCache":
        src = np.ascontiguousarray(src, dtype=np.int64)
        dst = np.ascontiguousarray(dst, dtype=np.int64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        c = np.ascontiguousarray(c, dtype=np.float64)
        out_pairs = np.argsort(src, kind="stable").astype(np.int64)
        in_pairs = np.argsort(dst, kind="stable").astype(np.int64)
        out_ptr = np.concatenate([[0], np.cumsum(np.bincount(src, minlength=n_docs))]).astype(np.int64)
        in_ptr = np.concatenate([[0], np.cumsum(np.bincount(dst, minlength=n_docs))]).astype(np.int64)
        return cls(src, dst, y, c, c * (y - 0.5), 2.0 * y - 1.0, np.zeros(src.shape[0]),
                   out_ptr, out_pairs, in_ptr, in_pairs)

    def __len__(self):
        return self.src.shape[0]

    def zeta(self, ell: float) -> np.ndarray:
        return ell - self.ytilde * self.omega

    def out_neighbors(self, i: int) -> np.ndarray:
        return self.dst[self.out_pairs[self.out_ptr[i]:self.out_ptr[i + 1]]]

    def in_neighbors(self, i: int) -> np.ndarray:
        return self.src[self.in_pairs[self.in_ptr[i]:self.in_ptr[i + 1]]]


@dataclass
class SamplerState:
    """Topic assignments, count statistics, weights and augmentation variables.

    Tokens and assignments are stored flat with ``doc_ptr`` offsets; doc
    indices are local to the state (the ``doc_ids`` array maps them back to
    corpus indices).
    """

    K: int
    vocab_size: int
    doc_ids: np.ndarray
    tokens: np.ndarray
    doc_ptr: np.ndarray
    z: np.ndarray
    Ckt: np.ndarray
    Cik: np.ndarray
    Ck: np.ndarray
    eta: np.ndarray
    lam: np.ndarray
    pairs: PairCache

    @property
    def n_docs(self) -> int:
        return self.doc_ptr.shape[0] - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.doc_ptr)

    def doc_z(self, i: int) -> np.ndarray:
        return self.z[self.doc_ptr[i]:self.doc_ptr[i + 1]]

    def z_lists(self) -> list[np.ndarray]:
        return [self.doc_z(i).copy() for i in range(self.n_docs)]

    def zbar_all(self) -> np.ndarray:
        return zbar_from_counts(self.Cik, self.lengths)

    def recount(self):
        """Counts recomputed from scratch from z."""
        K, V, D = self.K, self.vocab_size, self.n_docs
        Ckt = np.zeros((K, V), dtype=np.int64)
        np.add.at(Ckt, (self.z, self.tokens), 1)
        doc_of = np.repeat(np.arange(D), self.lengths)
        Cik = np.zeros((D, K), dtype=np.int64)
        np.add.at(Cik, (doc_of, self.z), 1)
        return Ckt, Cik, Ckt.sum(axis=1)

    def check_consistency(self, atol: float = 1e-9, full_matrix: bool | None = None):
        """Raise AssertionError if counts or cached omegas disagree with z."""
        Ckt, Cik, Ck = self.recount()
        assert np.array_equal(Ckt, self.Ckt), "topic-word counts out of sync"
        assert np.array_equal(Cik, self.Cik), "doc-topic counts out of sync"
        assert np.array_equal(Ck, self.Ck), "topic totals out of sync"
        assert np.array_equal(self.Cik.sum(axis=1), self.lengths)
        assert (self.lam > 0).all(), "non-positive augmentation variable"
        if full_matrix is not None and len(self.pairs):
            U = eta_to_matrix(self.eta, self.K, full_matrix)
            zb = self.zbar_all()
            omega = np.einsum("pk,kl,pl->p", zb[self.pairs.src], U, zb[self.pairs.dst])
            assert np.allclose(omega, self.pairs.omega, rtol=0, atol=atol), "cached omega out of sync"


def zbar(state: SamplerState, i: int) -> np.ndarray:
    """Average topic assignment of local document ``i`` (zeros if empty)."""
    n = state.doc_ptr[i + 1] - state.doc_ptr[i]
    if n == 0:
        return np.zeros(state.K)
    return state.Cik[i] / float(n)


def init_state(corpus: Corpus, pairs: TrainPairSet, hp: Hyperparams, rng: np.random.Generator,
               doc_ids: Sequence[int] | None = None) -> SamplerState:
    """Uniform random topic assignments, lambda = 1 and eta from its prior.

    ``doc_ids`` selects which corpus documents are modelled (default: all);
    every pair endpoint must be among them.
    """
    hp.validate()
    if doc_ids is None:
        doc_ids = np.arange(corpus.n_docs, dtype=np.int64)
    doc_ids = np.asarray(doc_ids, dtype=np.int64)
    lookup = np.full(corpus.n_docs, -1, dtype=np.int64)
    lookup[doc_ids] = np.arange(doc_ids.shape[0])
    docs = [corpus.docs[i] for i in doc_ids]
    lengths = np.array([len(d) for d in docs], dtype=np.int64)
    doc_ptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    tokens = (np.concatenate([d.tokens for d in docs]) if docs else np.empty(0)).astype(np.int64)

    K, V = hp.K, corpus.vocab_size
    z = rng.integers(0, K, size=tokens.shape[0]).astype(np.int64)

    src = lookup[pairs.src]
    dst = lookup[pairs.dst]
    if len(pairs) and ((src < 0).any() or (dst < 0).any()):
        raise ValueError("training pairs reference documents outside the modelled set")
    cache = PairCache.build(src, dst, pairs.y, pairs.c, doc_ids.shape[0])

    eta = rng.standard_normal(hp.eta_dim) * np.sqrt(hp.nu2)
    state = SamplerState(K, V, doc_ids, tokens, doc_ptr, z,
                         np.zeros((K, V), np.int64), np.zeros((doc_ids.shape[0], K), np.int64),
                         np.zeros(K, np.int64), eta, np.ones(len(pairs)), cache)
    state.Ckt, state.Cik, state.Ck = state.recount()
    return state


@dataclass
class PosteriorEstimate:
    """What prediction needs: topics, weights and the training documents' zbar."""

    phi_hat: np.ndarray
    U_hat: np.ndarray
    hyperparams: Hyperparams
    topic_word_counts: np.ndarray
    doc_ids: np.ndarray
    doc_external_ids: list[str]
    doc_zbar: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.phi_hat.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.phi_hat.shape[1]

    def U_matrix(self) -> np.ndarray:
        U = np.asarray(self.U_hat, dtype=np.float64)
        return U if U.ndim == 2 else np.diag(U)

    def to_dict(self) -> dict:
        return {
            "format": "grtm-model",
            "version": MODEL_FORMAT_VERSION,
            "hyperparams": self.hyperparams.to_dict(),
            "K": self.K,
            "vocab_size": self.vocab_size,
            "phi_hat": self.phi_hat.tolist(),
            "U_hat": np.asarray(self.U_hat).tolist(),
            "topic_word_counts": np.asarray(self.topic_word_counts).tolist(),
            "doc_ids": np.asarray(self.doc_ids).tolist(),
            "doc_external_ids": list(self.doc_external_ids),
            "doc_zbar": np.asarray(self.doc_zbar).tolist(),
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorEstimate":
        if d.get("format") != "grtm-model":
            raise ValueError("not a model file")
        if d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model file version {d.get('version')}")
        return cls(
            phi_hat=np.array(d["phi_hat"], dtype=np.float64),
            U_hat=np.array(d["U_hat"], dtype=np.float64),
            hyperparams=Hyperparams.from_dict(d["hyperparams"]),
            topic_word_counts=np.array(d["topic_word_counts"], dtype=np.float64),
            doc_ids=np.array(d["doc_ids"], dtype=np.int64),
            doc_external_ids=list(d["doc_external_ids"]),
            doc_zbar=np.array(d["doc_zbar"], dtype=np.float64).reshape(len(d["doc_ids"]), d["K"]),
            extra=d.get("extra", {}),
        )

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path: str) -> "PosteriorEstimate":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def posterior_from_state(state: SamplerState, hp: Hyperparams, corpus: Corpus | None = None) -> PosteriorEstimate:
    beta = hp.beta_vector(state.vocab_size)
    num = state.Ckt + beta[None, :]
    phi = num / num.sum(axis=1, keepdims=True)
    U = state.eta.reshape(hp.K, hp.K).copy() if hp.full_matrix else state.eta.copy()
    ext = [corpus.docs[i].external_id for i in state.doc_ids] if corpus is not None else [str(i) for i in state.doc_ids]
    return PosteriorEstimate(phi, U, hp, state.Ckt.astype(np.float64), state.doc_ids.copy(), ext, state.zbar_all())
