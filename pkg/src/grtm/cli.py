"""Command-line front end: ``grtm {train,eval,suggest,export,sweep}``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then command-line flags.  Every run writes its
effective settings to ``config.txt`` in the output directory; passing that
file back with ``--config`` reproduces the run.

Exit codes: 0 success, 2 usage error, 3 data format or integrity error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import glob
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .corpus import CorpusFormatError, load_linqs, split_folds
from .gibbs import TrainConfig
from .pipeline import fold_seed, run_fold
from .predict_eval import EvalReport, TestInferenceConfig, evaluate_fold, suggest_links
from .state import Hyperparams, PosteriorEstimate

logger = logging.getLogger("grtm")

DATA_DIR_ENV = "GRTM_DATA_DIR"

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


class IntegrityError(Exception):
    pass


@dataclass
class RunConfig:
    dataset: str = ""
    dataset_content: str = ""
    dataset_cites: str = ""
    undirected: bool = False
    k: int = 10
    loss: str = "logistic"
    full_matrix: bool = True
    approx: bool = False
    c_pos: float = 4.0
    c_neg: float = 1.0
    ell: float = 1.0
    alpha: float = 5.0
    beta: float = 0.01
    nu2: float = 1.0
    neg_ratio: float = 0.01
    burn_in: int = 400
    samples: int = 1
    folds: int = 5
    only_fold: int = -1
    seed: int = 0
    jobs: int = 1
    checkpoint_every: int = 50
    out: str = "grtm-out"
    rel_tol: float = 1e-4
    max_iters: int = 500
    word_samples: int = 20
    word_burn_in: int = 20

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(K=self.k, alpha=self.alpha, beta=self.beta, nu2=self.nu2, c_pos=self.c_pos,
                           c_neg=self.c_neg, ell=self.ell, loss=self.loss, full_matrix=self.full_matrix,
                           burn_in=self.burn_in, seed=self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.hyperparams(), approx_z=self.approx, post_burn_in_samples=self.samples,
                           checkpoint_every=self.checkpoint_every)

    def test_config(self) -> TestInferenceConfig:
        return TestInferenceConfig(rel_tol=self.rel_tol, max_iters=self.max_iters,
                                   n_samples_for_word_pred=self.word_samples, word_pred_burn_in=self.word_burn_in)

    def dump(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def read_config_file(path: str) -> dict:
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _FIELD_TYPES:
                raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
            out[key] = _coerce(key, value)
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in _FIELD_TYPES:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    cfg = RunConfig(**values)
    try:
        cfg.hyperparams()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not 0 < cfg.neg_ratio <= 1:
        raise UsageError("neg-ratio must lie in (0, 1]")
    if cfg.jobs < 1:
        raise UsageError("jobs must be >= 1")
    if cfg.samples < 1:
        raise UsageError("samples must be >= 1")
    return cfg


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def _split_paths(s: str) -> list[str]:
    return [p for p in (x.strip() for x in s.split(",")) if p]


def dataset_paths(cfg: RunConfig) -> tuple[list[str], list[str]]:
    if cfg.dataset_content or cfg.dataset_cites:
        content, cites = _split_paths(cfg.dataset_content), _split_paths(cfg.dataset_cites)
    elif cfg.dataset:
        root = os.environ.get(DATA_DIR_ENV)
        if not root:
            raise UsageError(f"--dataset needs ${DATA_DIR_ENV} to point at the data directory")
        base = os.path.join(root, cfg.dataset)
        if not os.path.isdir(base):
            raise UsageError(f"dataset directory not found: {base}")
        content = sorted(glob.glob(os.path.join(base, "**", "*.content"), recursive=True))
        cites = sorted(glob.glob(os.path.join(base, "**", "*.cites"), recursive=True))
    else:
        raise UsageError("no dataset given (use --dataset or --dataset-content/--dataset-cites)")
    if not content:
        raise UsageError("missing .content file")
    if not cites:
        raise UsageError("missing .cites file")
    for p in content + cites:
        if not os.path.isfile(p):
            raise UsageError(f"file not found: {p}")
    return content, cites


def load_dataset(cfg: RunConfig):
    content, cites = dataset_paths(cfg)
    corpus, report = load_linqs(content, cites, directed=not cfg.undirected)
    logger.info("corpus: %d docs, V=%d, %d links (%d records, %d unknown, %d duplicate, %d self)",
                corpus.n_docs, corpus.vocab_size, len(corpus.links), report.records, report.unknown_id,
                report.duplicate, report.self_link)
    return corpus


def _prepare_out(path: str):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory is not writable: {path}")


def _model_path(out: str, fold: int) -> str:
    return os.path.join(out, f"model_fold{fold}.json")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _selected_folds(cfg: RunConfig, corpus):
    try:
        folds = split_folds(corpus, cfg.folds, cfg.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if cfg.only_fold >= 0:
        if cfg.only_fold >= cfg.folds:
            raise UsageError(f"only-fold must be < folds ({cfg.folds})")
        folds = [folds[cfg.only_fold]]
    return folds


def _train_one(cfg: RunConfig, corpus, fold, resume: bool):
    ckpt = os.path.join(cfg.out, f"checkpoint_fold{fold.fold_index}.npz")
    result = run_fold(corpus, fold, cfg.train_config(), cfg.neg_ratio, evaluate=False, checkpoint_path=ckpt,
                      resume=resume)
    model = result.model
    model.extra.update({
        "fold_index": fold.fold_index,
        "n_folds": cfg.folds,
        "split_seed": cfg.seed,
        "n_corpus_docs": corpus.n_docs,
        "test_doc_ids": fold.test_array().tolist(),
        "n_pairs": result.n_pairs,
        "n_positive_pairs": result.n_positive,
    })
    model.save(_model_path(cfg.out, fold.fold_index))
    return fold.fold_index, result.timing


def _map_folds(fn, cfg: RunConfig, items):
    if cfg.jobs == 1 or len(items) == 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(items))) as pool:
        futures = [pool.submit(fn, *it) for it in items]
        return [f.result() for f in futures]


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    corpus = load_dataset(cfg)
    _prepare_out(cfg.out)
    with open(os.path.join(cfg.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.dump())
    folds = _selected_folds(cfg, corpus)
    results = _map_folds(_train_one, cfg, [(cfg, corpus, f, args.resume) for f in folds])
    with open(os.path.join(cfg.out, "timing.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = None
        for fold_index, timing in sorted(results, key=lambda r: r[0]):
            row = {"fold": fold_index, **timing.as_row()}
            if writer is None:
                writer = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
                writer.writeheader()
            writer.writerow(row)
    for fold_index, timing in sorted(results, key=lambda r: r[0]):
        pct = timing.percentages()
        print(f"fold {fold_index}: z {timing.z_seconds:.2f}s ({pct['z']:.1f}%)  "
              f"lambda {timing.lambda_seconds:.2f}s ({pct['lambda']:.1f}%)  "
              f"eta {timing.eta_seconds:.2f}s ({pct['eta']:.1f}%)")
    return 0


def _load_model(path: str) -> PosteriorEstimate:
    if not os.path.isfile(path):
        raise UsageError(f"model file not found: {path}")
    try:
        return PosteriorEstimate.load(path)
    except (ValueError, KeyError) as exc:
        raise IntegrityError(f"{path}: {exc}") from None


def _eval_one(cfg: RunConfig, corpus, fold):
    model = _load_model(_model_path(cfg.out, fold.fold_index))
    if model.vocab_size != corpus.vocab_size:
        raise IntegrityError(f"model vocabulary {model.vocab_size} != corpus vocabulary {corpus.vocab_size}")
    if model.K != cfg.k:
        raise IntegrityError(f"model has K={model.K}, configuration says K={cfg.k}")
    if model.extra.get("n_corpus_docs", corpus.n_docs) != corpus.n_docs:
        raise IntegrityError("model was trained on a corpus with a different number of documents")
    if sorted(model.extra.get("test_doc_ids", fold.test_array().tolist())) != fold.test_array().tolist():
        raise IntegrityError("model fold does not match the configured split")
    return evaluate_fold(corpus, fold, model, cfg.test_config(), seed=fold_seed(cfg.seed, fold.fold_index))


def cmd_eval(args) -> int:
    if args.config is None and args.out is not None:
        saved = os.path.join(args.out, "config.txt")
        if os.path.isfile(saved):
            args.config = saved
    cfg = resolve_config(args)
    corpus = load_dataset(cfg)
    folds = _selected_folds(cfg, corpus)
    metrics = _map_folds(_eval_one, cfg, [(cfg, corpus, f) for f in folds])
    report = EvalReport(sorted(metrics, key=lambda m: m.fold))
    report.write_csv(os.path.join(cfg.out, "metrics.csv"))
    report.write_json(os.path.join(cfg.out, "metrics.json"))
    print(report.table())
    return 0


def read_query(path: str, vocab_size: int) -> np.ndarray:
    """Token ids from a whitespace-separated id list or a ``.content``-style line."""
    if not os.path.isfile(path):
        raise UsageError(f"query file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise UsageError("empty query")
    parts = lines[0].split("\t") if "\t" in lines[0] else lines[0].split()
    if len(lines) == 1 and len(parts) == vocab_size + 2:
        try:
            ind = np.array(parts[1:-1], dtype=np.int64)
        except ValueError:
            raise IntegrityError("query word indicators must be integers") from None
        tokens = np.flatnonzero(ind)
    else:
        try:
            tokens = np.array(text.split(), dtype=np.int64)
        except ValueError:
            raise IntegrityError("query must be word ids or a .content line") from None
        bad = sorted(set(tokens[(tokens < 0) | (tokens >= vocab_size)].tolist()))
        if bad:
            raise IntegrityError(f"query words outside the vocabulary (V={vocab_size}): {bad}")
    if tokens.size == 0:
        raise UsageError("empty query")
    return tokens


def _read_titles(path: str | None) -> dict:
    if not path:
        return {}
    titles = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if "\t" in line:
                k, v = line.rstrip("\n").split("\t", 1)
                titles[k] = v
    return titles


def cmd_suggest(args) -> int:
    model = _load_model(args.model)
    tokens = read_query(args.query, model.vocab_size)
    if args.top_k < 1:
        raise UsageError("top-k must be >= 1")
    cfg = TestInferenceConfig(rel_tol=args.rel_tol, max_iters=args.max_iters)
    rows = suggest_links(tokens, model, args.top_k, cfg, np.random.default_rng(args.seed))
    titles = _read_titles(args.titles)
    out = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["rank", "doc_id", "title", "score"])
        for rank, (_, ext, score) in enumerate(rows, start=1):
            writer.writerow([rank, ext, titles.get(ext, ""), repr(score)])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _read_vocab(path: str | None, vocab_size: int) -> list[str]:
    if not path:
        return [f"w{t}" for t in range(vocab_size)]
    with open(path, encoding="utf-8") as fh:
        words = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if len(words) != vocab_size:
        raise IntegrityError(f"vocabulary file has {len(words)} words, model has {vocab_size}")
    return words


def cmd_export(args) -> int:
    model = _load_model(args.model)
    words = _read_vocab(args.vocab, model.vocab_size)
    _prepare_out(args.out)
    with open(os.path.join(args.out, "topics.txt"), "w", encoding="utf-8") as fh:
        for k, row in enumerate(model.phi_hat):
            top = np.argsort(-row, kind="stable")[:args.top_m]
            fh.write(f"topic {k}: " + " ".join(words[t] for t in top) + "\n")
    with open(os.path.join(args.out, "weights.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(np.asarray(model.U_hat)):
            writer.writerow([repr(float(v)) for v in row])
    return 0


def cmd_sweep(args) -> int:
    base = resolve_config(args)
    key = args.param.replace("-", "_")
    if key not in _FIELD_TYPES or key in ("out", "dataset", "dataset_content", "dataset_cites"):
        raise UsageError(f"cannot sweep over {args.param!r}")
    values = [_coerce(key, v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("no sweep values")
    summary_rows = []
    for v in values:
        point_out = os.path.join(base.out, f"{key}={v}")
        point = argparse.Namespace(**vars(args))
        setattr(point, key, v)
        point.out = point_out
        cmd_train(point)
        point.config = os.path.join(point_out, "config.txt")
        cmd_eval(point)
        report_csv = os.path.join(point_out, "metrics.csv")
        with open(report_csv, encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                if row["fold"] == "mean":
                    summary_rows.append({key: v, "metric": row["metric"], "mean": row["value"], "std": row["std"]})
    with open(os.path.join(base.out, f"sweep_{key}.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=[key, "metric", "mean", "std"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(summary_rows)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser, training: bool = True):
    p.add_argument("--config", help="key = value settings file; flags override it")
    p.add_argument("--dataset", help=f"dataset name under ${DATA_DIR_ENV}")
    p.add_argument("--dataset-content", help="comma-separated .content paths")
    p.add_argument("--dataset-cites", help="comma-separated .cites paths")
    p.add_argument("--undirected", action="store_const", const=True, help="collapse link orientation")
    p.add_argument("--k", type=int)
    p.add_argument("--loss", choices=["logistic", "hinge"])
    p.add_argument("--full-matrix", dest="full_matrix", action="store_const", const=True)
    p.add_argument("--diagonal", dest="full_matrix", action="store_const", const=False)
    p.add_argument("--approx", action="store_const", const=True, help="cache link factors once per document")
    p.add_argument("--c-pos", type=float)
    p.add_argument("--c-neg", type=float)
    p.add_argument("--ell", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--nu2", type=float)
    p.add_argument("--neg-ratio", type=float)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--samples", type=int, help="post-burn-in samples to average (default 1)")
    p.add_argument("--folds", type=int)
    p.add_argument("--only-fold", type=int, help="run a single fold")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="folds run in parallel")
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--rel-tol", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--word-samples", type=int)
    p.add_argument("--word-burn-in", type=int)
    if training:
        p.add_argument("--resume", action="store_true", help="continue from checkpoints in --out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grtm", description="Discriminative relational topic models.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model per fold")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate trained fold models")
    _add_run_flags(p, training=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("suggest", help="rank training documents as citations for a new document")
    p.add_argument("--model", required=True)
    p.add_argument("--query", required=True, help="word ids or a .content-style line")
    p.add_argument("--top-k", type=int, default=8)
    p.add_argument("--titles", help="tab-separated external id and title per line")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rel-tol", type=float, default=1e-4)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--output", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_suggest)

    p = sub.add_parser("export", help="write top words per topic and the weight matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", help="one word per line, in column order")
    p.add_argument("--top-m", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("sweep", help="train and evaluate over a grid of one setting")
    _add_run_flags(p)
    p.add_argument("--param", required=True, help="setting to vary, e.g. c-pos")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"grtm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusFormatError, IntegrityError) as exc:
        print(f"grtm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"grtm: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
