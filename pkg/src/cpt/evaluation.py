"""Meta-test evaluation, degree-binned accuracy, and experiment driver."""

import copy
import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from . import rng as rngs
from .data import SbmSpec, generate_sbm, load_dataset_dir, load_graph, split_classes
from .encoder import EncoderParams, encode, load_checkpoint
from .errors import ConfigurationError
from .graph import ClassSplit, Graph, normalize_adjacency
from .learner import MetaConfig, episode_logits
from .sampler import sample_task
from .trainer import VARIANTS, TrainConfig, save_run, train

log = logging.getLogger(__name__)

DEFAULT_DEGREE_BINS = (0, 2, 4, 8, 16)
RESULT_COLUMNS = ("variant", "learner", "n_way", "k_shot", "seed", "mean_accuracy", "std_dev", "num_tasks")
SUMMARY_COLUMNS = ("variant", "learner", "n_way", "k_shot", "num_runs", "mean_accuracy", "std_dev")
PER_TASK_COLUMNS = ("variant", "learner", "n_way", "k_shot", "seed", "repetition", "task", "accuracy")


@dataclass(frozen=True)
class EvalReport:
    mean_accuracy: float
    std_dev: float
    per_task: Tuple[float, ...]
    num_tasks: int
    n_way: int
    k_shot: int
    r_query: int
    seeds: Tuple[int, ...]

    @classmethod
    def from_accuracies(cls, accs, n_way, k_shot, r_query, seeds):
        accs = np.asarray(accs, dtype=np.float64)
        return cls(float(accs.mean()), float(accs.std()), tuple(float(a) for a in accs),
                   int(accs.size), n_way, k_shot, r_query, tuple(int(s) for s in seeds))


def _episodes(params, graph, pool, n_way, k_shot, r_query, num_tasks, seed, meta_cfg):
    """Yield ``(task, predicted_local_labels)`` for each meta-test episode on the clean graph."""
    adj = normalize_adjacency(graph)
    features = np.asarray(graph.features, dtype=np.float64)
    emb = None
    if meta_cfg.learner_kind == "prototypical":
        emb, _ = encode(adj, features, params)
    task_rng = rngs.stream(seed, "eval")
    for _ in range(num_tasks):
        task = sample_task(graph, pool, n_way, k_shot, r_query, task_rng)
        logits = episode_logits(adj, features, params, task, meta_cfg, emb)
        yield task, np.argmax(logits, axis=1)


def meta_test(params: EncoderParams, graph: Graph, novel_pool, n_way, k_shot, r_query,
              num_tasks=100, seed=0, meta_cfg: Optional[MetaConfig] = None) -> EvalReport:
    """Average query accuracy over ``num_tasks`` episodes drawn from ``novel_pool``.

    ``params`` are never modified; fomaml adaptations are per episode and discarded.
    """
    meta_cfg = meta_cfg or MetaConfig()
    accs = [float(np.mean(pred == task.query_labels))
            for task, pred in _episodes(params, graph, novel_pool, n_way, k_shot, r_query,
                                        num_tasks, seed, meta_cfg)]
    return EvalReport.from_accuracies(accs, n_way, k_shot, r_query, [seed])


def _check_bins(bins):
    bins = [int(b) for b in bins]
    if not bins:
        raise ConfigurationError("degree bins must be non-empty")
    if bins[0] != 0:
        raise ConfigurationError("the first degree bin must start at 0")
    if any(b2 <= b1 for b1, b2 in zip(bins, bins[1:])):
        raise ConfigurationError(f"degree bin boundaries must be strictly increasing, got {bins}")
    return bins


def degree_binned_accuracy(params, graph, pool, n_way, k_shot, r_query, num_tasks=100,
                           bins: Sequence[int] = DEFAULT_DEGREE_BINS, seed=0,
                           meta_cfg: Optional[MetaConfig] = None):
    """Query accuracy grouped by the clean-graph degree of each query node.

    ``bins`` are lower boundaries; bin ``i`` covers ``[bins[i], bins[i+1])``
    and the last bin is open-ended. Empty bins report ``accuracy=None``.
    """
    bins = _check_bins(bins)
    meta_cfg = meta_cfg or MetaConfig()
    correct = np.zeros(len(bins), dtype=np.int64)
    total = np.zeros(len(bins), dtype=np.int64)
    for task, pred in _episodes(params, graph, pool, n_way, k_shot, r_query, num_tasks, seed, meta_cfg):
        which = np.searchsorted(bins, graph.degrees[task.query_nodes], side="right") - 1
        np.add.at(total, which, 1)
        np.add.at(correct, which, (pred == task.query_labels).astype(np.int64))
    table = []
    for i, lo in enumerate(bins):
        hi = bins[i + 1] if i + 1 < len(bins) else None
        acc = float(correct[i] / total[i]) if total[i] else None
        table.append({"lower": lo, "upper": hi, "correct": int(correct[i]),
                      "total": int(total[i]), "accuracy": acc})
    return table


# --- experiments -------------------------------------------------------------

DEFAULT_MANIFEST = {
    "seed": 0,
    "num_seeds": 5,
    "train_seeds": None,
    "variants": ["cpt"],
    "dataset": {"sbm": {"num_classes": 12, "nodes_per_class": 50, "intra_p": 0.2,
                        "inter_p": 0.01, "feature_dim": 16, "feature_noise": 1.0, "seed": 0}},
    "split": {"counts": [5, 2, 5]},
    "train": {},
    "eval": {"shapes": [[5, 3]], "r_query": 5, "num_tasks": 100, "repetitions": 1,
             "checkpoint": "best", "degree_bins": None, "seed": None},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "dataset":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_manifest(manifest: dict) -> dict:
    """Fill defaults and validate; the result fully determines an experiment."""
    unknown = set(manifest) - set(DEFAULT_MANIFEST)
    if unknown:
        raise ConfigurationError(f"unknown manifest keys: {sorted(unknown)}")
    m = _merge(DEFAULT_MANIFEST, manifest)
    for v in m["variants"]:
        if v not in VARIANTS:
            raise ConfigurationError(f"unknown variant {v!r}")
    if int(m["num_seeds"]) < 1:
        raise ConfigurationError("num_seeds must be >= 1")
    unknown_eval = set(m["eval"]) - set(DEFAULT_MANIFEST["eval"])
    if unknown_eval:
        raise ConfigurationError(f"unknown eval keys: {sorted(unknown_eval)}")
    # full TrainConfig echo, so the run directory alone reproduces the run
    tc = TrainConfig.from_dict({**m["train"], "seed": int(m["seed"])})
    train_dict = tc.to_dict()
    train_dict.pop("seed")
    train_dict.pop("variant")
    m["train"] = train_dict
    if m["train_seeds"] is None:
        m["train_seeds"] = [int(m["seed"]) + i for i in range(int(m["num_seeds"]))]
    m["train_seeds"] = [int(s) for s in m["train_seeds"]]
    m["num_seeds"] = len(m["train_seeds"])
    if m["eval"]["seed"] is None:
        m["eval"]["seed"] = int(rngs.stream(int(m["seed"]), "eval-seed").integers(2**31))
    if m["eval"]["checkpoint"] not in ("best", "final"):
        raise ConfigurationError("eval.checkpoint must be 'best' or 'final'")
    if m["eval"]["degree_bins"] is not None:
        _check_bins(m["eval"]["degree_bins"])
    load_manifest_graph(m, check_only=True)
    return m


def load_manifest_graph(m, check_only=False):
    ds = m["dataset"]
    if "sbm" in ds:
        spec = SbmSpec(**ds["sbm"])
        return None if check_only else generate_sbm(spec)
    if "dir" in ds:
        return None if check_only else load_dataset_dir(ds["dir"])
    if {"edges", "features", "labels"} <= set(ds):
        return None if check_only else load_graph(ds["edges"], ds["features"], ds["labels"])
    raise ConfigurationError("dataset needs 'sbm', 'dir', or 'edges'/'features'/'labels'")


def manifest_split(m, graph) -> ClassSplit:
    sp = m["split"]
    if "classes" in sp:
        return ClassSplit.from_dict(sp["classes"])
    return split_classes(graph, sp["counts"], rngs.stream(int(m["seed"]), "split"))


def train_config(m, variant, seed) -> TrainConfig:
    return TrainConfig.from_dict({**m["train"], "variant": variant, "seed": int(seed)})


def training_seeds(m):
    return list(m["train_seeds"])


def evaluate_params(m, params, graph, split, meta_cfg):
    """``[(shape, EvalReport), ...]`` for every requested shape; all repetitions pooled."""
    ev = m["eval"]
    out = []
    for n_way, k_shot in ev["shapes"]:
        accs, seeds = [], []
        for rep in range(int(ev["repetitions"])):
            s = rngs_eval_seed(m, rep)
            r = meta_test(params, graph, split.novel_classes, int(n_way), int(k_shot), int(ev["r_query"]),
                          int(ev["num_tasks"]), s, meta_cfg)
            accs.extend(r.per_task)
            seeds.append(s)
        out.append(((int(n_way), int(k_shot)),
                    EvalReport.from_accuracies(accs, int(n_way), int(k_shot), int(ev["r_query"]), seeds)))
    return out


def rngs_eval_seed(m, rep):
    """Evaluation seed for repetition ``rep``; shared by every variant and training seed."""
    return int(m["eval"]["seed"]) + rep


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] for c in columns])


def _fmt(x):
    return repr(float(x))


def run_cell(m, variant, seed, out_dir, graph=None, split=None):
    """Train one (variant, seed) run, write its directory, return result + per-task rows."""
    if graph is None:
        graph = load_manifest_graph(m)
    if split is None:
        split = manifest_split(m, graph)
    cfg = train_config(m, variant, seed)
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    resolved = {**m, "variants": [variant], "train_seeds": [int(seed)], "num_seeds": 1,
                "split": {"classes": split.to_dict()}}
    (run_dir / "manifest.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))
    state = train(graph, split, cfg)
    save_run(state, cfg, run_dir)
    params = state.final_or_best() if m["eval"]["checkpoint"] == "best" else state.params
    results, per_task = [], []
    learner = cfg.meta.learner_kind
    for (n_way, k_shot), rep in evaluate_params(m, params, graph, split, cfg.meta):
        results.append({"variant": variant, "learner": learner, "n_way": n_way, "k_shot": k_shot,
                        "seed": seed, "mean_accuracy": _fmt(rep.mean_accuracy),
                        "std_dev": _fmt(rep.std_dev), "num_tasks": rep.num_tasks})
        per_rep = int(m["eval"]["num_tasks"])
        for i, acc in enumerate(rep.per_task):
            per_task.append({"variant": variant, "learner": learner, "n_way": n_way, "k_shot": k_shot,
                             "seed": seed, "repetition": i // per_rep, "task": i % per_rep,
                             "accuracy": _fmt(acc)})
    _write_csv(run_dir / "eval.csv", RESULT_COLUMNS, results)
    _write_csv(run_dir / "per_task.csv", PER_TASK_COLUMNS, per_task)
    bins = m["eval"]["degree_bins"]
    if bins is not None:
        ev = m["eval"]
        rows = []
        for n_way, k_shot in ev["shapes"]:
            table = degree_binned_accuracy(params, graph, split.novel_classes, int(n_way), int(k_shot),
                                           int(ev["r_query"]), int(ev["num_tasks"]), bins,
                                           rngs_eval_seed(m, 0), cfg.meta)
            for b in table:
                rows.append({"n_way": n_way, "k_shot": k_shot, **b,
                             "accuracy": "" if b["accuracy"] is None else _fmt(b["accuracy"]),
                             "upper": "" if b["upper"] is None else b["upper"]})
        _write_csv(run_dir / "degree.csv",
                   ("n_way", "k_shot", "lower", "upper", "correct", "total", "accuracy"), rows)
    return results, per_task


def _cell_job(args):
    m, variant, seed, out_dir = args
    try:
        return variant, seed, run_cell(m, variant, seed, out_dir), None
    except Exception as exc:  # recorded per cell; the experiment continues
        return variant, seed, None, f"{type(exc).__name__}: {exc}"


def summarize(results):
    """One row per (variant, learner, shape): mean and population std over runs."""
    groups = {}
    for r in results:
        key = (r["variant"], r["learner"], int(r["n_way"]), int(r["k_shot"]))
        groups.setdefault(key, []).append(float(r["mean_accuracy"]))
    order = {v: i for i, v in enumerate(VARIANTS)}
    rows = []
    for (variant, learner, n_way, k_shot), vals in sorted(groups.items(),
                                                          key=lambda kv: (order[kv[0][0]], kv[0][1:])):
        a = np.asarray(vals)
        rows.append({"variant": variant, "learner": learner, "n_way": n_way, "k_shot": k_shot,
                     "num_runs": a.size, "mean_accuracy": _fmt(a.mean()), "std_dev": _fmt(a.std())})
    return rows


def run_experiment(manifest: dict, out_dir, jobs: int = 1):
    """Train and meta-test every (variant, seed) cell of ``manifest``.

    Writes one directory per run plus ``results.csv``, ``per_task.csv``,
    ``summary.csv`` (and ``failures.csv`` if any cell failed) under
    ``out_dir``. Returns ``(summary_rows, result_rows, failures)``.
    """
    m = resolve_manifest(manifest)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(m, indent=2, sort_keys=True))
    cells = [(m, v, s, out / v / f"seed_{s}") for v in m["variants"] for s in training_seeds(m)]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_cell_job, cells))
    else:
        outcomes = [_cell_job(c) for c in cells]

    results, per_task, failures = [], [], []
    for variant, seed, payload, err in outcomes:
        if err is not None:
            log.error("run %s seed %s failed: %s", variant, seed, err)
            failures.append({"variant": variant, "seed": seed, "error": err})
            continue
        results.extend(payload[0])
        per_task.extend(payload[1])
    _write_csv(out / "results.csv", RESULT_COLUMNS, results)
    _write_csv(out / "per_task.csv", PER_TASK_COLUMNS, per_task)
    summary = summarize(results)
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    if failures:
        _write_csv(out / "failures.csv", ("variant", "seed", "error"), failures)
    return summary, results, failures


def load_params_for_eval(path):
    params, flags = load_checkpoint(path)
    return params, ("fomaml" if flags & 1 else "prototypical")


def chance_sigma(n_way, n_predictions):
    p = 1.0 / n_way
    return math.sqrt(p * (1 - p) / n_predictions)
