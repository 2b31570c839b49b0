"""Two-stage competence-progressive training and its ablation variants.

A run is a sequence of segments. A plain segment trains on the original
graph; a curriculum segment drops ``beta(t)`` of the edges before each
epoch's task is sampled. Variants differ only in the segment plan:

=========  ==========================================================
cpt        plain T epochs, then ascending curriculum T epochs
no_ss      plain 2T epochs
no_fs      ascending curriculum 2T epochs from fresh initialization
reverse    descending curriculum T epochs, then plain T epochs
=========  ==========================================================
"""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import rng as rngs
from .curriculum import CompetenceConfig, beta_for_epoch
from .encoder import EncoderParams, encode, init_params, save_checkpoint
from .errors import CPTError, ConfigurationError, DataError, NumericalError
from .graph import ClassSplit, Graph, drop_edges, normalize_adjacency
from .learner import (MetaConfig, episode_logits, episode_loss_from_logits, fomaml_task_gradient,
                      outer_step, proto_task_gradient)
from .sampler import sample_task

log = logging.getLogger(__name__)

VARIANTS = ("cpt", "no_ss", "no_fs", "reverse")
FLAG_FOMAML = 1
METRIC_COLUMNS = ("epoch", "stage", "beta", "train_loss", "val_loss", "val_accuracy")


@dataclass(frozen=True)
class TrainConfig:
    n_way: int = 5
    k_shot: int = 3
    r_query: int = 5
    epochs_per_stage: int = 2000
    meta: MetaConfig = field(default_factory=MetaConfig)
    curriculum: CompetenceConfig = field(default_factory=CompetenceConfig)
    weight_decay: float = 5e-4
    seed: int = 0
    validation_interval: int = 50
    val_tasks: int = 20
    variant: str = "cpt"
    hidden_dim: int = 32
    embed_dim: int = 16
    dropout: float = 0.0

    def __post_init__(self):
        if self.epochs_per_stage < 0:
            raise ConfigurationError("epochs_per_stage must be >= 0")
        if self.validation_interval < 1:
            raise ConfigurationError("validation_interval must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        meta = MetaConfig(**d.pop("meta", {}))
        cur = CompetenceConfig(**d.pop("curriculum", {}))
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigurationError(f"unknown training keys: {sorted(unknown)}")
        return cls(meta=meta, curriculum=cur, **d)


@dataclass
class MetricRow:
    epoch: int
    stage: str
    beta: float
    train_loss: float
    val_loss: Optional[float] = None
    val_accuracy: Optional[float] = None


@dataclass
class TrainState:
    params: EncoderParams
    epoch: int = 0
    stage: str = "one"
    best_params: Optional[EncoderParams] = None
    best_val_accuracy: Optional[float] = None
    log: List[MetricRow] = field(default_factory=list)

    def final_or_best(self) -> EncoderParams:
        return self.best_params if self.best_params is not None else self.params


def validation_shape(cfg: TrainConfig, split: ClassSplit):
    """Episode width used for validation; ``None`` if validation is impossible."""
    n_way = min(cfg.n_way, len(split.validation_classes))
    return n_way if n_way >= 2 else None


class _Run:
    """Mutable per-run context: data, random streams, validation episodes."""

    def __init__(self, graph: Graph, split: ClassSplit, cfg: TrainConfig):
        self.graph = graph
        self.split = split
        self.cfg = cfg
        self.features = np.asarray(graph.features, dtype=np.float64)
        self.clean_adj = normalize_adjacency(graph)
        self.sampler_rng = rngs.stream(cfg.seed, "sampler")
        self.dropout_rng = rngs.stream(cfg.seed, "dropout")
        self.val_tasks = self._validation_tasks()

    def _validation_tasks(self):
        n_way = validation_shape(self.cfg, self.split)
        if n_way is None or self.cfg.val_tasks < 1:
            return []
        vrng = rngs.stream(self.cfg.seed, "validation")
        try:
            return [sample_task(self.graph, self.split.validation_classes, n_way, self.cfg.k_shot,
                                self.cfg.r_query, vrng) for _ in range(self.cfg.val_tasks)]
        except DataError as exc:
            log.warning("validation disabled: %s", exc)
            return []

    def validate(self, params):
        emb = None
        if self.cfg.meta.learner_kind == "prototypical":
            emb, _ = encode(self.clean_adj, self.features, params)
        losses, accs = [], []
        for task in self.val_tasks:
            logits = episode_logits(self.clean_adj, self.features, params, task, self.cfg.meta, emb)
            losses.append(episode_loss_from_logits(logits, task, self.cfg.meta.gamma))
            accs.append(float(np.mean(np.argmax(logits, axis=1) == task.query_labels)))
        return float(np.mean(losses)), float(np.mean(accs))

    def step(self, params, adj, epoch):
        cfg = self.cfg
        try:
            task = sample_task(self.graph, self.split.base_classes, cfg.n_way, cfg.k_shot,
                               cfg.r_query, self.sampler_rng)
        except CPTError as exc:
            raise type(exc)(f"epoch {epoch}: {exc}") from exc
        drop_rng = self.dropout_rng if cfg.dropout > 0 else None
        if cfg.meta.learner_kind == "prototypical":
            loss, _, grads = proto_task_gradient(adj, self.features, params, task, cfg.meta.gamma,
                                                 cfg.dropout, drop_rng)
        else:
            loss, _, grads = fomaml_task_gradient(adj, self.features, params, task, cfg.meta,
                                                  cfg.dropout, drop_rng)
        lr = cfg.meta.alpha2
        decay = 1.0 - lr * cfg.weight_decay
        decayed = EncoderParams(params.W1 * decay, params.W2 * decay)
        return loss, outer_step(decayed, [grads], lr)


def _betas(kind, n_epochs, curriculum: CompetenceConfig):
    if kind == "plain":
        return [0.0] * n_epochs
    cc = curriculum.resolved(n_epochs)
    ascending = [beta_for_epoch(t, cc) for t in range(1, n_epochs + 1)]
    return ascending if kind == "ascending" else ascending[::-1]


def segment_plan(cfg: TrainConfig):
    """``[(stage_label, schedule_kind, n_epochs), ...]`` for the configured variant."""
    T = cfg.epochs_per_stage
    return {
        "cpt": [("one", "plain", T), ("two", "ascending", T)],
        "no_ss": [("one", "plain", 2 * T)],
        "no_fs": [("two", "ascending", 2 * T)],
        "reverse": [("two", "descending", T), ("one", "plain", T)],
    }[cfg.variant]


def beta_schedule(cfg: TrainConfig):
    """The full per-epoch beta sequence the variant will log."""
    out = []
    for _, kind, n in segment_plan(cfg):
        out.extend(_betas(kind, n, cfg.curriculum))
    return out


def _run_segment(run: _Run, state: TrainState, label, kind, n_epochs):
    cfg = run.cfg
    state.stage = label
    for beta in _betas(kind, n_epochs, cfg.curriculum):
        state.epoch += 1
        if kind == "plain" or beta == 0.0:
            adj = run.clean_adj
        else:
            hard = drop_edges(run.graph, beta, rngs.stream(cfg.seed, "dropedge", state.epoch))
            adj = normalize_adjacency(hard)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                loss, state.params = run.step(state.params, adj, state.epoch)
        except NumericalError as exc:
            raise NumericalError(f"epoch {state.epoch}: training diverged ({exc})") from exc
        if not math.isfinite(loss) or not state.params.is_finite():
            raise NumericalError(f"epoch {state.epoch}: training diverged (loss={loss})")
        row = MetricRow(state.epoch, label, float(beta), float(loss))
        if run.val_tasks and state.epoch % cfg.validation_interval == 0:
            row.val_loss, row.val_accuracy = run.validate(state.params)
            if state.best_val_accuracy is None or row.val_accuracy > state.best_val_accuracy:
                state.best_val_accuracy = row.val_accuracy
                state.best_params = state.params.copy()
        state.log.append(row)
    return state


def _initial_state(graph, cfg, params):
    if params is None:
        params = init_params(graph.feature_dim, cfg.hidden_dim, cfg.embed_dim,
                             rngs.stream(cfg.seed, "init"))
    return TrainState(params=params)


def train_stage_one(graph: Graph, split: ClassSplit, cfg: TrainConfig,
                    params: Optional[EncoderParams] = None) -> TrainState:
    """``epochs_per_stage`` epochs of plain episodic training on the original graph."""
    run = _Run(graph, split, cfg)
    state = _initial_state(graph, cfg, params)
    return _run_segment(run, state, "one", "plain", cfg.epochs_per_stage)


def train_stage_two(graph: Graph, split: ClassSplit, cfg: TrainConfig,
                    params: Optional[EncoderParams] = None) -> TrainState:
    """``epochs_per_stage`` curriculum epochs with competence-scheduled DropEdge."""
    run = _Run(graph, split, cfg)
    state = _initial_state(graph, cfg, params)
    return _run_segment(run, state, "two", "ascending", cfg.epochs_per_stage)


def train(graph: Graph, split: ClassSplit, cfg: TrainConfig,
          params: Optional[EncoderParams] = None) -> TrainState:
    """Run the configured variant end to end, tracking the best validation checkpoint."""
    run = _Run(graph, split, cfg)
    state = _initial_state(graph, cfg, params)
    for label, kind, n in segment_plan(cfg):
        _run_segment(run, state, label, kind, n)
    return state


def _fmt(x):
    return "" if x is None else repr(float(x))


def write_metrics_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([r.epoch, r.stage, _fmt(r.beta), _fmt(r.train_loss),
                        _fmt(r.val_loss), _fmt(r.val_accuracy)])


def read_metrics_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append(MetricRow(
                int(rec["epoch"]), rec["stage"], float(rec["beta"]), float(rec["train_loss"]),
                float(rec["val_loss"]) if rec["val_loss"] else None,
                float(rec["val_accuracy"]) if rec["val_accuracy"] else None))
    return rows


def checkpoint_flags(cfg: TrainConfig) -> int:
    return FLAG_FOMAML if cfg.meta.learner_kind == "fomaml" else 0


def save_run(state: TrainState, cfg: TrainConfig, out_dir):
    """Write ``metrics.csv``, ``final.ckpt`` and ``best.ckpt`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(state.log, out / "metrics.csv")
    flags = checkpoint_flags(cfg)
    save_checkpoint(out / "final.ckpt", state.params, flags)
    save_checkpoint(out / "best.ckpt", state.final_or_best(), flags)
    return out


def with_variant(cfg: TrainConfig, variant: str, seed: Optional[int] = None) -> TrainConfig:
    return replace(cfg, variant=variant, seed=cfg.seed if seed is None else seed)
