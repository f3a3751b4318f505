"""Train-then-evaluate on one cross-validation fold."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, FoldSplit, build_train_pairs
from .gibbs import TimingReport, TrainConfig, train
from .predict_eval import METRICS, FoldMetrics, TestInferenceConfig, evaluate_fold
from .state import PosteriorEstimate


@dataclass
class FoldResult:
    model: PosteriorEstimate
    timing: TimingReport
    metrics: FoldMetrics | None
    n_pairs: int
    n_positive: int


def fold_seed(seed: int, fold_index: int) -> int:
    """Independent per-fold seed; negative subsampling is redrawn per fold."""
    return int(np.random.SeedSequence([int(seed), int(fold_index)]).generate_state(1)[0])


def run_fold(corpus: Corpus, fold: FoldSplit, config: TrainConfig, neg_ratio: float,
             test_cfg: TestInferenceConfig | None = None, evaluate: bool = True, metrics=METRICS,
             checkpoint_path: str | None = None, resume: bool = False) -> FoldResult:
    hp = config.hyperparams
    seed = fold_seed(hp.seed, fold.fold_index)
    train_ids = fold.train_array()
    pairs = build_train_pairs(corpus, train_ids, neg_ratio, hp.c_pos, hp.c_neg, seed)
    rng = np.random.default_rng(seed)
    model, timing = train(corpus, pairs, config, rng, doc_ids=train_ids, checkpoint_path=checkpoint_path,
                          resume=resume)
    result = None
    if evaluate:
        result = evaluate_fold(corpus, fold, model, test_cfg, seed=seed, metrics=metrics)
    return FoldResult(model, timing, result, len(pairs), pairs.n_positive)
