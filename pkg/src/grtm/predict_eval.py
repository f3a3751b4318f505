"""Held-out topic inference, link and word prediction, and the evaluation metrics.

Every per-document random stream is derived from ``(seed, corpus doc index)``
so that serial and parallel evaluation produce identical numbers.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.stats import rankdata

from .corpus import Corpus, FoldSplit
from .state import PosteriorEstimate

logger = logging.getLogger(__name__)

METRICS = ("link_rank", "word_rank", "auc")


@dataclass
class TestInferenceConfig:
    __test__ = False  # not a pytest class

    rel_tol: float = 1e-4
    max_iters: int = 500
    n_samples_for_word_pred: int = 20
    word_pred_burn_in: int = 20
    # score held-out documents as the citing side; False scores the reverse
    test_to_train: bool = True

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.n_samples_for_word_pred < 1:
            raise ValueError("n_samples_for_word_pred must be >= 1")


def doc_rng(seed: int, doc_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(doc_index)])


# ---------------------------------------------------------------------------
# test-document topic inference
# ---------------------------------------------------------------------------


@numba.njit(cache=True, error_model="numpy")
def _doc_loglik(word_phi, counts, alpha, alpha_sum):
    N, K = word_phi.shape
    denom = N + alpha_sum
    ll = 0.0
    for n in range(N):
        s = 0.0
        for k in range(K):
            s += word_phi[n, k] * (counts[k] + alpha[k]) / denom
        ll += math.log(s)
    return ll


@numba.njit(cache=True, error_model="numpy")
def _draw(w, total, rng):
    u = rng.random() * total
    acc = 0.0
    K = w.shape[0]
    for k in range(K):
        acc += w[k]
        if u < acc:
            return k
    # u landed in the rounding slack: return the last topic with mass
    for k in range(K - 1, -1, -1):
        if w[k] > 0.0:
            return k
    return K - 1


@numba.njit(cache=True, error_model="numpy")
def _sweep_words(word_phi, alpha, z, counts, w, rng):
    N, K = word_phi.shape
    for n in range(N):
        old = z[n]
        counts[old] -= 1
        total = 0.0
        for k in range(K):
            w[k] = word_phi[n, k] * (counts[k] + alpha[k])
            total += w[k]
        new = _draw(w, total, rng)
        z[n] = new
        counts[new] += 1


@numba.njit(cache=True, error_model="numpy")
def _infer_kernel(word_phi, alpha, rel_tol, max_iters, rng):
    N, K = word_phi.shape
    alpha_sum = alpha.sum()
    z = np.empty(N, dtype=np.int64)
    counts = np.zeros(K, dtype=np.int64)
    for n in range(N):
        z[n] = rng.integers(0, K)
        counts[z[n]] += 1
    w = np.empty(K)
    prev = _doc_loglik(word_phi, counts, alpha, alpha_sum)
    iters = 0
    for it in range(max_iters):
        _sweep_words(word_phi, alpha, z, counts, w, rng)
        iters += 1
        cur = _doc_loglik(word_phi, counts, alpha, alpha_sum)
        if abs(cur - prev) <= rel_tol * abs(prev):
            break
        prev = cur
    return z, counts, iters


@numba.njit(cache=True, error_model="numpy")
def _marginal_kernel(word_phi, alpha, n_burn, n_sweeps, rng):
    N, K = word_phi.shape
    z = np.empty(N, dtype=np.int64)
    counts = np.zeros(K, dtype=np.int64)
    for n in range(N):
        z[n] = rng.integers(0, K)
        counts[z[n]] += 1
    w = np.empty(K)
    freq = np.zeros((N, K))
    for it in range(n_burn + n_sweeps):
        _sweep_words(word_phi, alpha, z, counts, w, rng)
        if it >= n_burn:
            for n in range(N):
                freq[n, z[n]] += 1.0
    return freq / n_sweeps


def _word_phi(tokens, phi_hat) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if tokens.size == 0:
        raise ValueError("cannot infer topics of an empty document")
    if tokens.min() < 0 or tokens.max() >= phi_hat.shape[1]:
        raise ValueError("token id outside the model vocabulary")
    return np.ascontiguousarray(np.asarray(phi_hat, dtype=np.float64)[:, tokens].T)


def _alpha_vec(alpha, K) -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    return np.full(K, float(a)) if a.ndim == 0 else np.ascontiguousarray(a)


def infer_test_topics(tokens, phi_hat, alpha, cfg: TestInferenceConfig, rng: np.random.Generator):
    """Gibbs-sample the topics of an unseen document under fixed topics.

    Runs until the relative change of the document log-likelihood drops
    below ``cfg.rel_tol`` or ``cfg.max_iters`` sweeps; returns the final
    assignments and their average ``zbar``.
    """
    word_phi = _word_phi(tokens, phi_hat)
    alpha = _alpha_vec(alpha, word_phi.shape[1])
    z, counts, _ = _infer_kernel(word_phi, alpha, float(cfg.rel_tol), int(cfg.max_iters), rng)
    return z, counts / float(z.shape[0])


def held_out_topic_marginals(tokens, phi_hat, alpha, n_sweeps: int, rng: np.random.Generator, burn_in: int = 100):
    """Long-run per-token topic frequencies of the held-out Gibbs chain (N x K)."""
    word_phi = _word_phi(tokens, phi_hat)
    alpha = _alpha_vec(alpha, word_phi.shape[1])
    return _marginal_kernel(word_phi, alpha, int(burn_in), int(n_sweeps), rng)


# ---------------------------------------------------------------------------
# link-evidence chain (words hidden) for word prediction
# ---------------------------------------------------------------------------


@numba.njit(cache=True, error_model="numpy")
def _link_loglik(loss, omega, c, ell):
    # un-augmented pseudo-likelihood of an observed (positive) link
    if loss == 0:
        if omega >= 0:
            return -c * math.log1p(math.exp(-omega))
        return c * (omega - math.log1p(math.exp(omega)))
    gap = ell - omega
    return -2.0 * c * gap if gap > 0.0 else 0.0


@numba.njit(cache=True, error_model="numpy")
def _evidence_kernel(n_tokens, alpha, W, c, loss, ell, n_burn, n_samples, rng):
    # omega_d = zbar . W[d]; sample z for hidden words given the links only
    deg, K = W.shape
    inv_n = 1.0 / n_tokens
    z = np.empty(n_tokens, dtype=np.int64)
    counts = np.zeros(K, dtype=np.int64)
    for n in range(n_tokens):
        z[n] = rng.integers(0, K)
        counts[z[n]] += 1
    om = np.zeros(deg)
    for d in range(deg):
        s = 0.0
        for k in range(K):
            s += W[d, k] * counts[k]
        om[d] = s * inv_n
    L = np.empty(K)
    w = np.empty(K)
    acc = np.zeros(K)
    for it in range(n_burn + n_samples):
        for n in range(n_tokens):
            old = z[n]
            counts[old] -= 1
            for d in range(deg):
                om[d] -= W[d, old] * inv_n
            for k in range(K):
                L[k] = 0.0
            for d in range(deg):
                for k in range(K):
                    L[k] += _link_loglik(loss, om[d] + W[d, k] * inv_n, c[d], ell)
            m = L.max()
            total = 0.0
            for k in range(K):
                w[k] = (counts[k] + alpha[k]) * math.exp(L[k] - m)
                total += w[k]
            new = _draw(w, total, rng)
            z[n] = new
            counts[new] += 1
            for d in range(deg):
                om[d] += W[d, new] * inv_n
        if it >= n_burn:
            for k in range(K):
                acc[k] += counts[k] * inv_n
    return acc / n_samples


def evidence_topic_mixture(n_tokens: int, alpha, evidence_dirs, evidence_c, loss: str, ell: float,
                           cfg: TestInferenceConfig, rng: np.random.Generator) -> np.ndarray:
    """Posterior mean of zbar for a document whose words are hidden.

    ``evidence_dirs[d]`` is the vector ``w`` with ``omega_d = zbar . w`` for
    the d-th observed link; with no links this is the prior mean.
    """
    K = np.asarray(evidence_dirs).shape[1] if np.ndim(evidence_dirs) == 2 else len(np.atleast_1d(alpha))
    alpha = _alpha_vec(alpha, K)
    W = np.ascontiguousarray(np.asarray(evidence_dirs, dtype=np.float64).reshape(-1, K))
    if W.shape[0] == 0:
        return alpha / alpha.sum()
    c = np.ascontiguousarray(np.broadcast_to(np.asarray(evidence_c, dtype=np.float64), (W.shape[0],)))
    return _evidence_kernel(int(n_tokens), alpha, W, c, 0 if loss == "logistic" else 1, float(ell),
                            int(cfg.word_pred_burn_in), int(cfg.n_samples_for_word_pred), rng)


# ---------------------------------------------------------------------------
# link prediction and metrics
# ---------------------------------------------------------------------------


def predict_link(zbar_i, zbar_j, U_hat) -> tuple[float, int]:
    """Discriminant score and the strict-threshold label 1(score > 0)."""
    U = np.asarray(U_hat, dtype=np.float64)
    if U.ndim == 1:
        U = np.diag(U)
    score = float(np.asarray(zbar_i, dtype=np.float64) @ U @ np.asarray(zbar_j, dtype=np.float64))
    return score, int(score > 0)


def link_scores(test_zbar: np.ndarray, train_zbar: np.ndarray, U_hat, directed: bool = True,
                test_to_train: bool = True) -> np.ndarray:
    """Score matrix (n_test x n_train) of test->train discriminants.

    Undirected corpora take the larger of the two orientations.
    """
    U = np.asarray(U_hat, dtype=np.float64)
    if U.ndim == 1:
        U = np.diag(U)
    fwd = test_zbar @ U @ train_zbar.T
    if not directed:
        return np.maximum(fwd, (train_zbar @ U @ test_zbar.T).T)
    return fwd if test_to_train else (train_zbar @ U @ test_zbar.T).T


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied (positive, negative) pairs count one half."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def descending_ranks(scores) -> np.ndarray:
    """1-based ranks, highest score first, ties sharing their average rank."""
    return rankdata(-np.asarray(scores, dtype=np.float64), method="average")


def link_rank_from_scores(score_matrix, truth_mask) -> tuple[float, int]:
    """Mean over test documents of the average rank of their true links.

    Rows without any true link are skipped; returns ``(value, n_skipped)``.
    """
    score_matrix = np.atleast_2d(np.asarray(score_matrix, dtype=np.float64))
    truth_mask = np.atleast_2d(np.asarray(truth_mask, dtype=bool))
    if score_matrix.shape[1] == 0:
        raise ValueError("link rank needs at least one training document")
    per_doc = []
    skipped = 0
    for scores, truth in zip(score_matrix, truth_mask):
        if not truth.any():
            skipped += 1
            continue
        per_doc.append(descending_ranks(scores)[truth].mean())
    value = float(np.mean(per_doc)) if per_doc else float("nan")
    return value, skipped


def word_rank_from_distribution(predictive, tokens) -> float:
    """Average tie-aware rank of a document's words under a predictive distribution."""
    ranks = descending_ranks(predictive)
    return float(ranks[np.asarray(tokens, dtype=np.int64)].mean())


def _truth_matrix(corpus: Corpus, test_ids, train_ids, test_to_train: bool = True) -> np.ndarray:
    pos = {int(t): r for r, t in enumerate(test_ids)}
    col = {int(t): c for c, t in enumerate(train_ids)}
    truth = np.zeros((len(test_ids), len(train_ids)), dtype=bool)
    for i, j in corpus.links:
        if corpus.directed:
            a, b = (i, j) if test_to_train else (j, i)
            if a in pos and b in col:
                truth[pos[a], col[b]] = True
        else:
            if i in pos and j in col:
                truth[pos[i], col[j]] = True
            if j in pos and i in col:
                truth[pos[j], col[i]] = True
    return truth


def infer_zbar_many(corpus: Corpus, doc_ids, model: PosteriorEstimate, cfg: TestInferenceConfig, seed: int):
    alpha = model.hyperparams.alpha_vector()
    out = np.zeros((len(doc_ids), model.K))
    for r, d in enumerate(doc_ids):
        tokens = corpus.docs[int(d)].tokens
        if tokens.size:
            out[r] = infer_test_topics(tokens, model.phi_hat, alpha, cfg, doc_rng(seed, d))[1]
    return out


def link_rank(test_docs, train_docs, model: PosteriorEstimate, corpus: Corpus, cfg: TestInferenceConfig | None = None,
              seed: int = 0, test_zbar=None) -> tuple[float, int]:
    """Link rank of held-out documents against the model's training documents."""
    cfg = cfg or TestInferenceConfig()
    train_docs = np.asarray(train_docs, dtype=np.int64)
    if train_docs.size == 0:
        raise ValueError("link rank needs at least one training document")
    if test_zbar is None:
        test_zbar = infer_zbar_many(corpus, test_docs, model, cfg, seed)
    train_zbar = _train_zbar(model, train_docs)
    scores = link_scores(test_zbar, train_zbar, model.U_hat, corpus.directed, cfg.test_to_train)
    return link_rank_from_scores(scores, _truth_matrix(corpus, test_docs, train_docs, cfg.test_to_train))


def _train_zbar(model: PosteriorEstimate, train_docs) -> np.ndarray:
    where = {int(d): r for r, d in enumerate(model.doc_ids)}
    missing = [int(d) for d in train_docs if int(d) not in where]
    if missing:
        raise ValueError(f"{len(missing)} training documents are not part of the model")
    return model.doc_zbar[[where[int(d)] for d in train_docs]]


def word_rank(test_docs, model: PosteriorEstimate, corpus: Corpus, cfg: TestInferenceConfig | None = None,
              seed: int = 0) -> tuple[float, int]:
    """Mean word rank of held-out documents given their links to training documents.

    The words of each test document are hidden; its topic mixture is sampled
    from the links alone and mixed through the topics.  Returns
    ``(value, n_docs_without_links)``; documents without links use the prior
    mixture and are included in the mean.
    """
    cfg = cfg or TestInferenceConfig()
    hp = model.hyperparams
    alpha = hp.alpha_vector()
    U = model.U_matrix()
    where = {int(d): r for r, d in enumerate(model.doc_ids)}
    out_links: dict[int, list[int]] = {}
    in_links: dict[int, list[int]] = {}
    for i, j in corpus.links:
        out_links.setdefault(i, []).append(j)
        in_links.setdefault(j, []).append(i)
    values = []
    unlinked = 0
    for d in test_docs:
        d = int(d)
        tokens = corpus.docs[d].tokens
        if tokens.size == 0:
            continue
        dirs = []
        # omega(d, j) = zbar_d . (U zbar_j); omega(j, d) = zbar_d . (U^T zbar_j)
        for j in sorted(out_links.get(d, [])):
            if j in where:
                dirs.append(U @ model.doc_zbar[where[j]])
        for j in sorted(in_links.get(d, [])):
            if j in where:
                dirs.append(U.T @ model.doc_zbar[where[j]])
        if not dirs:
            unlinked += 1
        W = np.array(dirs, dtype=np.float64).reshape(-1, model.K)
        mix = evidence_topic_mixture(tokens.size, alpha, W, hp.c_pos, hp.loss, hp.ell, cfg, doc_rng(seed, d))
        values.append(word_rank_from_distribution(mix @ model.phi_hat, tokens))
    value = float(np.mean(values)) if values else float("nan")
    return value, unlinked


def suggest_links(query_tokens, model: PosteriorEstimate, top_k: int, cfg: TestInferenceConfig | None = None,
                  rng: np.random.Generator | None = None, train_docs=None) -> list[tuple[int, str, float]]:
    """Rank training documents as link targets for a new document.

    Returns up to ``top_k`` ``(corpus doc index, external id, score)`` tuples,
    best first.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    cfg = cfg or TestInferenceConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    _, zq = infer_test_topics(query_tokens, model.phi_hat, model.hyperparams.alpha_vector(), cfg, rng)
    rows = np.arange(len(model.doc_ids)) if train_docs is None else np.array(
        [r for r, d in enumerate(model.doc_ids) if int(d) in set(int(t) for t in train_docs)], dtype=np.int64)
    scores = link_scores(zq[None, :], model.doc_zbar[rows], model.U_hat, True, cfg.test_to_train)[0]
    order = np.argsort(-scores, kind="stable")[:top_k]
    return [(int(model.doc_ids[rows[o]]), model.doc_external_ids[rows[o]], float(scores[o])) for o in order]


# ---------------------------------------------------------------------------
# fold evaluation and reports
# ---------------------------------------------------------------------------


@dataclass
class FoldMetrics:
    fold: int
    link_rank: float
    word_rank: float
    auc: float
    n_test_docs: int = 0
    n_skipped_link_rank: int = 0
    n_unlinked_word_rank: int = 0


def evaluate_fold(corpus: Corpus, fold: FoldSplit, model: PosteriorEstimate, cfg: TestInferenceConfig | None = None,
                  seed: int = 0, metrics=METRICS) -> FoldMetrics:
    """Link rank, word rank and AUC of one fold's held-out documents."""
    cfg = cfg or TestInferenceConfig()
    test_ids = fold.test_array()
    train_ids = np.asarray(model.doc_ids, dtype=np.int64)
    test_zbar = infer_zbar_many(corpus, test_ids, model, cfg, seed)
    scores = link_scores(test_zbar, model.doc_zbar, model.U_hat, corpus.directed, cfg.test_to_train)
    truth = _truth_matrix(corpus, test_ids, train_ids, cfg.test_to_train)
    lr, skipped = link_rank_from_scores(scores, truth) if "link_rank" in metrics else (float("nan"), 0)
    if "auc" in metrics and truth.any() and not truth.all():
        a = auc(scores.ravel(), truth.ravel())
    else:
        a = float("nan")
    if "word_rank" in metrics:
        wr, unlinked = word_rank(test_ids, model, corpus, cfg, seed)
    else:
        wr, unlinked = float("nan"), 0
    return FoldMetrics(fold.fold_index, lr, wr, a, len(test_ids), skipped, unlinked)


@dataclass
class EvalReport:
    folds: list[FoldMetrics] = field(default_factory=list)

    def summary(self) -> dict:
        out = {}
        for m in METRICS:
            vals = np.array([getattr(f, m) for f in self.folds], dtype=np.float64)
            std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            out[m] = {"mean": float(np.mean(vals)) if vals.size else float("nan"), "std": std}
        return out

    def rows(self) -> list[dict]:
        rows = []
        summary = self.summary()
        for m in METRICS:
            for f in self.folds:
                rows.append({"metric": m, "fold": str(f.fold), "value": _fmt(getattr(f, m)), "std": ""})
            rows.append({"metric": m, "fold": "mean", "value": _fmt(summary[m]["mean"]),
                         "std": _fmt(summary[m]["std"])})
        return rows

    def write_csv(self, path: str):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["metric", "fold", "value", "std"], lineterminator="\n")
            writer.writeheader()
            writer.writerows(self.rows())

    def to_dict(self) -> dict:
        return {
            "folds": [f.__dict__ for f in self.folds],
            "summary": self.summary(),
        }

    def write_json(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def table(self) -> str:
        s = self.summary()
        lines = [f"{'metric':<10} {'mean':>12} {'std':>12}"]
        for m in METRICS:
            lines.append(f"{m:<10} {s[m]['mean']:>12.4f} {s[m]['std']:>12.4f}")
        return "\n".join(lines)


def _fmt(x: float) -> str:
    return repr(float(x))
