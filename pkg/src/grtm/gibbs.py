"""Augment-and-collapse Gibbs samplers for the logistic and hinge losses.

One training iteration draws the weights eta given (Z, lambda), sweeps every
token's topic given (eta, lambda), then redraws every lambda given (Z, eta).
A chain is strictly sequential; run independent chains for parallelism.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import sparse

from .corpus import Corpus, TrainPairSet
from .samplers import (
    PrecisionGaussian,
    sample_hinge_lambda_many,
    sample_polya_gamma_many,
    sample_precision_gaussian,
)
from .state import (
    Hyperparams,
    PairCache,
    PosteriorEstimate,
    SamplerState,
    eta_to_matrix,
    init_state,
    pair_features,
    posterior_from_state,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_LOSS_CODE = {"logistic": 0, "hinge": 1}


@dataclass
class TrainConfig:
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    approx_z: bool = False
    record_timing: bool = True
    post_burn_in_samples: int = 1
    checkpoint_every: int = 50
    debug_checks: bool = False

    def __post_init__(self):
        if self.post_burn_in_samples < 1:
            raise ValueError("post_burn_in_samples must be >= 1")


@dataclass
class TimingReport:
    z_seconds: float = 0.0
    lambda_seconds: float = 0.0
    eta_seconds: float = 0.0
    total_seconds: float = 0.0
    iterations: int = 0

    def percentages(self) -> dict:
        tot = self.total_seconds if self.total_seconds > 0 else 1.0
        return {
            "z": 100.0 * self.z_seconds / tot,
            "lambda": 100.0 * self.lambda_seconds / tot,
            "eta": 100.0 * self.eta_seconds / tot,
        }

    def largest_phase(self) -> str:
        phases = {"z": self.z_seconds, "lambda": self.lambda_seconds, "eta": self.eta_seconds}
        return max(phases, key=phases.get)

    def as_row(self) -> dict:
        pct = self.percentages()
        return {
            "iterations": self.iterations,
            "z_seconds": round(self.z_seconds, 6),
            "z_percent": round(pct["z"], 2),
            "lambda_seconds": round(self.lambda_seconds, 6),
            "lambda_percent": round(pct["lambda"], 2),
            "eta_seconds": round(self.eta_seconds, 6),
            "eta_percent": round(pct["eta"], 2),
            "total_seconds": round(self.total_seconds, 6),
        }


# ---------------------------------------------------------------------------
# numba kernel for the topic-assignment sweep
# ---------------------------------------------------------------------------


@numba.njit(cache=True, error_model="numpy")
def _log_psi(loss, omega, kappa, lam, c, ytilde, ell):
    if loss == 0:
        return kappa * omega - 0.5 * lam * omega * omega
    t = lam + c * (ell - ytilde * omega)
    return -t * t / (2.0 * lam)


@numba.njit(cache=True, error_model="numpy")
def _z_sweep(tokens, doc_ptr, z, Ckt, Cik, Ck, alpha, beta, beta_sum, U, G, H,
             src, dst, kappa, lam, c, ytilde, ell, omega,
             out_ptr, out_pairs, in_ptr, in_pairs, loss, approx, rng):
    D = doc_ptr.shape[0] - 1
    K = Ckt.shape[0]
    max_deg = 0
    for i in range(D):
        deg = out_ptr[i + 1] - out_ptr[i] + in_ptr[i + 1] - in_ptr[i]
        if deg > max_deg:
            max_deg = deg
    W = np.empty((max(max_deg, 1), K))
    om = np.empty(max(max_deg, 1))
    pidx = np.empty(max(max_deg, 1), dtype=np.int64)
    L = np.zeros(K)
    w = np.empty(K)
    zb = np.empty(K)
    n_fallback = 0

    for i in range(D):
        start = doc_ptr[i]
        end = doc_ptr[i + 1]
        N = end - start
        if N == 0:
            continue
        inv_n = 1.0 / N
        # per-neighbour direction vectors: omega(k) = base + W[d, k] / N
        deg = 0
        for q in range(out_ptr[i], out_ptr[i + 1]):
            p = out_pairs[q]
            j = dst[p]
            pidx[deg] = p
            om[deg] = omega[p]
            for k in range(K):
                W[deg, k] = G[j, k]
            deg += 1
        for q in range(in_ptr[i], in_ptr[i + 1]):
            p = in_pairs[q]
            j = src[p]
            pidx[deg] = p
            om[deg] = omega[p]
            for k in range(K):
                W[deg, k] = H[j, k]
            deg += 1

        for k in range(K):
            L[k] = 0.0
        if approx and deg > 0:
            # link factor frozen at document entry: one "average" token is
            # swapped for the candidate topic
            for d in range(deg):
                p = pidx[d]
                s = 0.0
                for k in range(K):
                    s += W[d, k] * Cik[i, k]
                base = om[d] - s * inv_n * inv_n
                for k in range(K):
                    L[k] += _log_psi(loss, base + W[d, k] * inv_n, kappa[p], lam[p], c[p], ytilde[p], ell)

        for n in range(start, end):
            t = tokens[n]
            old = z[n]
            Ckt[old, t] -= 1
            Cik[i, old] -= 1
            Ck[old] -= 1
            if not approx and deg > 0:
                for d in range(deg):
                    om[d] -= W[d, old] * inv_n
                for k in range(K):
                    L[k] = 0.0
                for d in range(deg):
                    p = pidx[d]
                    kp = kappa[p]
                    lp = lam[p]
                    cp = c[p]
                    yp = ytilde[p]
                    for k in range(K):
                        L[k] += _log_psi(loss, om[d] + W[d, k] * inv_n, kp, lp, cp, yp, ell)
            max_l = L[0]
            for k in range(1, K):
                if L[k] > max_l:
                    max_l = L[k]
            total = 0.0
            for k in range(K):
                w[k] = (Ckt[k, t] + beta[t]) * (Cik[i, k] + alpha[k]) / (Ck[k] + beta_sum) * math.exp(L[k] - max_l)
                total += w[k]
            if not (total > 0.0 and total < np.inf):
                n_fallback += 1
                max_lw = -np.inf
                for k in range(K):
                    w[k] = (math.log(Ckt[k, t] + beta[t]) + math.log(Cik[i, k] + alpha[k])
                            - math.log(Ck[k] + beta_sum) + L[k])
                    if not (w[k] == w[k]):
                        w[k] = -np.inf
                    if w[k] > max_lw:
                        max_lw = w[k]
                total = 0.0
                for k in range(K):
                    if max_lw == -np.inf or max_lw == np.inf:
                        w[k] = 1.0
                    else:
                        w[k] = math.exp(w[k] - max_lw)
                    total += w[k]
            u = rng.random() * total
            new = K - 1
            acc = 0.0
            for k in range(K):
                acc += w[k]
                if u < acc:
                    new = k
                    break
            z[n] = new
            Ckt[new, t] += 1
            Cik[i, new] += 1
            Ck[new] += 1
            if not approx:
                for d in range(deg):
                    om[d] += W[d, new] * inv_n

        # refresh this document's cached projections and its pairs' omegas
        for k in range(K):
            zb[k] = Cik[i, k] * inv_n
        for a in range(K):
            g = 0.0
            h = 0.0
            for b in range(K):
                g += U[a, b] * zb[b]
                h += U[b, a] * zb[b]
            G[i, a] = g
            H[i, a] = h
        for d in range(deg):
            p = pidx[d]
            s = 0.0
            if src[p] == i:
                j = dst[p]
                for k in range(K):
                    s += zb[k] * G[j, k]
            else:
                j = src[p]
                for k in range(K):
                    s += zb[k] * H[j, k]
            omega[p] = s
    return n_fallback


# ---------------------------------------------------------------------------
# conditional draws
# ---------------------------------------------------------------------------


def refresh_projections(state: SamplerState, hp: Hyperparams):
    """Recompute G = zbar U^T, H = zbar U and every cached omega."""
    U = eta_to_matrix(state.eta, hp.K, hp.full_matrix)
    zb = state.zbar_all()
    G = np.ascontiguousarray(zb @ U.T)
    H = np.ascontiguousarray(zb @ U)
    pc = state.pairs
    if len(pc):
        pc.omega[:] = np.einsum("pk,pk->p", zb[pc.src], G[pc.dst])
    return U, G, H


def eta_weights(state: SamplerState, hp: Hyperparams) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair (precision weight, linear coefficient) for the eta conditional."""
    pc = state.pairs
    if hp.loss == "logistic":
        return state.lam, pc.kappa
    weight = pc.c * pc.c / state.lam
    coef = pc.c * pc.ytilde * (state.lam + pc.c * hp.ell) / state.lam
    return weight, coef


def eta_conditional(state: SamplerState, hp: Hyperparams) -> PrecisionGaussian:
    """Gaussian conditional of eta given (Z, lambda) for the configured loss.

    The precision sum over pairs of x x^T, with x = vec(zbar_i zbar_j^T),
    is grouped by source document: sum_i (zbar_i zbar_i^T) kron M_i with
    M_i = sum_j w_ij zbar_j zbar_j^T.  That costs O(P K^2 + D K^4) instead of
    O(P K^4) for P pairs and D documents.
    """
    pc = state.pairs
    K, D = hp.K, state.n_docs
    dim = hp.eta_dim
    prec = np.eye(dim) / hp.nu2
    if len(pc) == 0:
        return PrecisionGaussian(prec, np.zeros(dim))
    zb = state.zbar_all()
    weight, coef = eta_weights(state, hp)
    outer = (zb[:, :, None] * zb[:, None, :]).reshape(D, K * K)
    wmat = sparse.csr_matrix((weight, (pc.src, pc.dst)), shape=(D, D))
    per_src = np.asarray(wmat @ outer)  # row i: vec(M_i)
    cmat = sparse.csr_matrix((coef, (pc.src, pc.dst)), shape=(D, D))
    cross = zb.T @ np.asarray(cmat @ zb)  # sum_p coef_p zbar_i zbar_j^T
    if hp.full_matrix:
        grouped = outer.T @ per_src  # [(a, b), (c, d)] = sum_i zbar_ia zbar_ib M_i[c, d]
        prec += grouped.reshape(K, K, K, K).transpose(0, 2, 1, 3).reshape(dim, dim)
        lin = cross.ravel()
    else:
        prec += (outer * per_src).sum(axis=0).reshape(K, K)
        lin = np.diag(cross).copy()
    prec = 0.5 * (prec + prec.T)
    return PrecisionGaussian(prec, lin)


def eta_conditional_by_pairs(state: SamplerState, hp: Hyperparams, chunk: int = 4096) -> PrecisionGaussian:
    """Reference form of :func:`eta_conditional` that sums one pair at a time."""
    pc = state.pairs
    prec = np.eye(hp.eta_dim) / hp.nu2
    lin = np.zeros(hp.eta_dim)
    if len(pc) == 0:
        return PrecisionGaussian(prec, lin)
    zb = state.zbar_all()
    weight, coef = eta_weights(state, hp)
    for s in range(0, len(pc), chunk):
        x = pair_features(zb, pc.src[s:s + chunk], pc.dst[s:s + chunk], hp.full_matrix)
        prec += (x * weight[s:s + chunk, None]).T @ x
        lin += x.T @ coef[s:s + chunk]
    prec = 0.5 * (prec + prec.T)
    return PrecisionGaussian(prec, lin)


def sample_eta_logistic(state: SamplerState, hp: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    if hp.loss != "logistic":
        raise ValueError("hyperparameters are configured for the hinge loss")
    state.eta = sample_precision_gaussian(eta_conditional(state, hp), rng)
    return state.eta


def sample_eta_hinge(state: SamplerState, hp: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    if hp.loss != "hinge":
        raise ValueError("hyperparameters are configured for the logistic loss")
    state.eta = sample_precision_gaussian(eta_conditional(state, hp), rng)
    return state.eta


def sample_eta(state: SamplerState, hp: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    state.eta = sample_precision_gaussian(eta_conditional(state, hp), rng)
    return state.eta


def sample_lambda_logistic(state: SamplerState, hp: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    pc = state.pairs
    if len(pc):
        state.lam = sample_polya_gamma_many(pc.c, pc.omega, rng)
    return state.lam


def sample_lambda_hinge(state: SamplerState, hp: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    pc = state.pairs
    if len(pc):
        state.lam = sample_hinge_lambda_many(pc.c, pc.zeta(hp.ell), rng)
    return state.lam


def sample_lambda(state: SamplerState, hp: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    if hp.loss == "logistic":
        return sample_lambda_logistic(state, hp, rng)
    return sample_lambda_hinge(state, hp, rng)


def sample_z_sweep(state: SamplerState, hp: Hyperparams, rng: np.random.Generator, mode: str = "exact",
                   projections=None) -> int:
    """One pass over every token.  Returns the number of log-space fallbacks.

    ``projections`` is the ``(U, G, H)`` triple from :func:`refresh_projections`
    for the current eta; it is recomputed when omitted.
    """
    if mode not in ("exact", "approx"):
        raise ValueError(f"mode must be 'exact' or 'approx', got {mode!r}")
    if projections is None:
        projections = refresh_projections(state, hp)
    U, G, H = projections
    pc = state.pairs
    alpha = hp.alpha_vector()
    beta = hp.beta_vector(state.vocab_size)
    n_fallback = _z_sweep(
        state.tokens, state.doc_ptr, state.z, state.Ckt, state.Cik, state.Ck,
        alpha, beta, float(beta.sum()), np.ascontiguousarray(U), G, H,
        pc.src, pc.dst, pc.kappa, state.lam, pc.c, pc.ytilde, float(hp.ell), pc.omega,
        pc.out_ptr, pc.out_pairs, pc.in_ptr, pc.in_pairs,
        _LOSS_CODE[hp.loss], mode == "approx", rng,
    )
    if n_fallback:
        logger.warning("z sweep: %d conditionals renormalised in log space", n_fallback)
    return int(n_fallback)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str, state: SamplerState, hp: Hyperparams, config: TrainConfig, iteration: int,
                    rng: np.random.Generator, accum: dict | None, timing: TimingReport):
    meta = {
        "version": CHECKPOINT_VERSION,
        "iteration": iteration,
        "hyperparams": hp.to_dict(),
        "approx_z": config.approx_z,
        "post_burn_in_samples": config.post_burn_in_samples,
        "rng_state": rng.bit_generator.state,
        "n_accum": 0 if accum is None else accum["n"],
        "timing": timing.__dict__,
    }
    arrays = dict(z=state.z, Ckt=state.Ckt, Cik=state.Cik, Ck=state.Ck, eta=state.eta, lam=state.lam,
                  doc_ids=state.doc_ids)
    if accum is not None and accum["n"]:
        arrays.update(acc_phi=accum["phi"], acc_eta=accum["eta"], acc_zbar=accum["zbar"])
    tmp = path + ".tmp.npz"
    np.savez(tmp, meta=np.array(json.dumps(meta)), **arrays)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[dict, dict]:
    with np.load(path, allow_pickle=False) as f:
        meta = json.loads(str(f["meta"]))
        arrays = {k: f[k].copy() for k in f.files if k != "meta"}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    return meta, arrays


# ---------------------------------------------------------------------------
# training driver
# ---------------------------------------------------------------------------


def _accumulate(accum: dict, state: SamplerState, hp: Hyperparams):
    beta = hp.beta_vector(state.vocab_size)
    num = state.Ckt + beta[None, :]
    phi = num / num.sum(axis=1, keepdims=True)
    if accum["n"] == 0:
        accum["phi"] = np.zeros_like(phi)
        accum["eta"] = np.zeros_like(state.eta)
        accum["zbar"] = np.zeros((state.n_docs, hp.K))
    accum["phi"] += phi
    accum["eta"] += state.eta
    accum["zbar"] += state.zbar_all()
    accum["n"] += 1


def train(corpus: Corpus, pairs: TrainPairSet, config: TrainConfig, rng: np.random.Generator,
          doc_ids=None, checkpoint_path: str | None = None, resume: bool = False,
          callback=None) -> tuple[PosteriorEstimate, TimingReport]:
    """Run the collapsed Gibbs chain and return the posterior estimate.

    ``doc_ids`` restricts the modelled documents (default: all).  With
    ``checkpoint_path`` the full chain state, including the generator, is
    written every ``config.checkpoint_every`` iterations; ``resume=True``
    continues from it and reproduces an uninterrupted run exactly.
    ``callback(iteration, state)`` is invoked after every iteration.
    """
    hp = config.hyperparams
    hp.validate()
    S = config.post_burn_in_samples
    total_iters = hp.burn_in + S - 1
    timing = TimingReport()
    accum = {"n": 0}

    state = init_state(corpus, pairs, hp, rng, doc_ids=doc_ids)
    start = 0
    if resume and checkpoint_path and os.path.exists(checkpoint_path):
        meta, arrays = load_checkpoint(checkpoint_path)
        if meta["hyperparams"] != hp.to_dict() or not np.array_equal(arrays["doc_ids"], state.doc_ids):
            raise ValueError("checkpoint does not match the current configuration")
        for name in ("z", "Ckt", "Cik", "Ck", "eta", "lam"):
            setattr(state, name, arrays[name])
        rng.bit_generator.state = meta["rng_state"]
        start = meta["iteration"]
        timing = TimingReport(**meta["timing"])
        if meta["n_accum"]:
            accum = {"n": meta["n_accum"], "phi": arrays["acc_phi"], "eta": arrays["acc_eta"],
                     "zbar": arrays["acc_zbar"]}
        logger.info("resumed from %s at iteration %d", checkpoint_path, start)

    if start == 0 and hp.burn_in == 0:
        _accumulate(accum, state, hp)

    mode = "approx" if config.approx_z else "exact"
    for it in range(start, total_iters):
        t0 = time.perf_counter()
        sample_eta(state, hp, rng)
        projections = refresh_projections(state, hp)
        t1 = time.perf_counter()
        sample_z_sweep(state, hp, rng, mode=mode, projections=projections)
        t2 = time.perf_counter()
        sample_lambda(state, hp, rng)
        t3 = time.perf_counter()
        if config.record_timing:
            timing.eta_seconds += t1 - t0
            timing.z_seconds += t2 - t1
            timing.lambda_seconds += t3 - t2
            timing.total_seconds += t3 - t0
        timing.iterations += 1
        if config.debug_checks:
            state.check_consistency(full_matrix=hp.full_matrix)
        if it + 1 >= hp.burn_in:
            _accumulate(accum, state, hp)
        if callback is not None:
            callback(it + 1, state)
        if checkpoint_path and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, state, hp, config, it + 1, rng, accum, timing)

    est = posterior_from_state(state, hp, corpus)
    if accum["n"] > 1:
        n = accum["n"]
        est.phi_hat = accum["phi"] / n
        eta = accum["eta"] / n
        est.U_hat = eta.reshape(hp.K, hp.K) if hp.full_matrix else eta
        est.doc_zbar = accum["zbar"] / n
    est.extra = {"iterations": total_iters, "approx_z": config.approx_z, "samples": accum["n"]}
    return est, timing


__all__ = [
    "TrainConfig",
    "TimingReport",
    "PairCache",
    "eta_conditional",
    "refresh_projections",
    "sample_eta",
    "sample_eta_logistic",
    "sample_eta_hinge",
    "sample_lambda",
    "sample_lambda_logistic",
    "sample_lambda_hinge",
    "sample_z_sweep",
    "save_checkpoint",
    "load_checkpoint",
    "train",
]
