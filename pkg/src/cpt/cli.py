"""Command-line entry point.

Every subcommand prints ``key=value`` lines on stdout. Failures print one
``error: kind=<usage|runtime> message=<json string>`` line on stderr and
exit with 2 (usage / manifest problems) or 1 (runtime failures).
"""

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import rng as rngs
from .data import SbmSpec, generate_sbm, load_dataset_dir, save_dataset_dir, split_classes
from .encoder import load_checkpoint
from .errors import CPTError, ConfigurationError
from .evaluation import (DEFAULT_DEGREE_BINS, PER_TASK_COLUMNS, RESULT_COLUMNS, _write_csv,
                         degree_binned_accuracy, evaluate_params, load_manifest_graph,
                         manifest_split, resolve_manifest, run_experiment, train_config,
                         training_seeds)
from .gradcheck import check_encoder_gradients
from .trainer import FLAG_FOMAML, VARIANTS, save_run, train

OUTPUT_ROOT_ENV = "CPT_OUTPUT_ROOT"
GRAD_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(**fields):
    print(" ".join(f"{k}={v}" for k, v in fields.items()), flush=True)


def _fail(kind, message, code):
    print(f"error: kind={kind} message={json.dumps(str(message))}", file=sys.stderr, flush=True)
    return code


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_override(m, assignment):
    if "=" not in assignment:
        raise UsageError(f"--set expects KEY=VALUE, got {assignment!r}")
    key, value = assignment.split("=", 1)
    parts = key.split(".")
    node = m
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise UsageError(f"--set: unknown manifest key {key!r}")
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise UsageError(f"--set: unknown manifest key {key!r}")
    node[parts[-1]] = _parse_value(value)


def load_manifest(path, seed=None, overrides=()):
    """Read, override and resolve a manifest. Problems surface as ``UsageError``."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"manifest not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"invalid manifest {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"invalid manifest {path}: top level must be an object")
    if seed is not None:
        # derived seeds follow the new root seed
        raw["seed"] = int(seed)
        raw.pop("train_seeds", None)
        if isinstance(raw.get("eval"), dict):
            raw["eval"].pop("seed", None)
    try:
        m = resolve_manifest(raw)
        if overrides:
            m = copy.deepcopy(m)
            for o in overrides:
                _apply_override(m, o)
            m = resolve_manifest(m)
    except (ConfigurationError, CPTError, TypeError, ValueError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"invalid manifest {path}: {exc}") from None
    return m


def _out_dir(args, default_name):
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / default_name


def cmd_train(args):
    m = load_manifest(args.manifest, args.seed, args.set)
    variant = args.variant or m["variants"][0]
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}")
    seed = training_seeds(m)[0]
    out = _out_dir(args, "train")
    graph = load_manifest_graph(m)
    split = manifest_split(m, graph)
    cfg = train_config(m, variant, seed)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {**m, "variants": [variant], "train_seeds": [seed], "num_seeds": 1,
                "split": {"classes": split.to_dict()}}
    (out / "manifest.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))
    state = train(graph, split, cfg)
    save_run(state, cfg, out)
    _emit(variant=variant, seed=seed, epochs=state.epoch,
          best_val_accuracy="" if state.best_val_accuracy is None else repr(state.best_val_accuracy),
          out=out)
    return 0


def cmd_eval(args):
    m = load_manifest(args.manifest, args.seed, args.set)
    params, flags = load_checkpoint(args.checkpoint)
    graph = load_manifest_graph(m)
    split = manifest_split(m, graph)
    cfg = train_config(m, m["variants"][0], training_seeds(m)[0])
    learner = "fomaml" if flags & FLAG_FOMAML else "prototypical"
    meta = replace(cfg.meta, learner_kind=learner)
    out = _out_dir(args, "eval")
    out.mkdir(parents=True, exist_ok=True)
    results, per_task = [], []
    ev = m["eval"]
    for (n_way, k_shot), rep in evaluate_params(m, params, graph, split, meta):
        results.append({"variant": "checkpoint", "learner": learner, "n_way": n_way, "k_shot": k_shot,
                        "seed": ev["seed"], "mean_accuracy": repr(rep.mean_accuracy),
                        "std_dev": repr(rep.std_dev), "num_tasks": rep.num_tasks})
        for i, acc in enumerate(rep.per_task):
            per_task.append({"variant": "checkpoint", "learner": learner, "n_way": n_way,
                             "k_shot": k_shot, "seed": ev["seed"],
                             "repetition": i // int(ev["num_tasks"]), "task": i % int(ev["num_tasks"]),
                             "accuracy": repr(acc)})
        _emit(n_way=n_way, k_shot=k_shot, mean_accuracy=f"{rep.mean_accuracy:.6f}",
              std_dev=f"{rep.std_dev:.6f}", num_tasks=rep.num_tasks)
    _write_csv(out / "eval.csv", RESULT_COLUMNS, results)
    _write_csv(out / "per_task.csv", PER_TASK_COLUMNS, per_task)
    bins = ev["degree_bins"] if ev["degree_bins"] is not None else list(DEFAULT_DEGREE_BINS)
    rows = []
    for n_way, k_shot in ev["shapes"]:
        for b in degree_binned_accuracy(params, graph, split.novel_classes, int(n_way), int(k_shot),
                                        int(ev["r_query"]), int(ev["num_tasks"]), bins,
                                        int(ev["seed"]), meta):
            rows.append({"n_way": n_way, "k_shot": k_shot, **b,
                         "upper": "" if b["upper"] is None else b["upper"],
                         "accuracy": "" if b["accuracy"] is None else repr(b["accuracy"])})
    _write_csv(out / "degree.csv", ("n_way", "k_shot", "lower", "upper", "correct", "total", "accuracy"), rows)
    return 0


def cmd_ablate(args):
    m = load_manifest(args.manifest, args.seed, args.set)
    m["variants"] = list(args.variants or VARIANTS)
    for v in m["variants"]:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}")
    out = _out_dir(args, "ablate")
    summary, results, failures = run_experiment(m, out, jobs=args.jobs)
    for r in summary:
        _emit(**{k: r[k] for k in ("variant", "learner", "n_way", "k_shot", "num_runs")},
              mean_accuracy=f"{float(r['mean_accuracy']):.6f}", std_dev=f"{float(r['std_dev']):.6f}")
    for f in failures:
        _emit(failed_variant=f["variant"], seed=f["seed"], error=json.dumps(f["error"]))
    _emit(runs=len({(r["variant"], r["seed"]) for r in results}),
          failures=len(failures), out=out)
    return 1 if failures else 0


def cmd_gen_sbm(args):
    spec = SbmSpec(args.classes, args.per_class, args.intra, args.inter, args.feature_dim,
                   args.noise, args.seed if args.seed is not None else 0)
    graph = generate_sbm(spec)
    out = _out_dir(args, "sbm")
    paths = save_dataset_dir(graph, out)
    (out / "sbm.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True))
    _emit(num_nodes=graph.num_nodes, num_edges=graph.num_edges, feature_dim=graph.feature_dim,
          edges=paths[0], features=paths[1], labels=paths[2])
    return 0


def cmd_grad_check(args):
    worst = check_encoder_gradients(args.trials, args.seed if args.seed is not None else 0,
                                    args.epsilon)
    ok = worst < GRAD_TOLERANCE
    _emit(trials=args.trials, max_relative_error=f"{worst:.3e}", tolerance=f"{GRAD_TOLERANCE:.0e}",
          status="pass" if ok else "fail")
    return 0 if ok else 1


def cmd_split(args):
    seed = args.seed if args.seed is not None else 0
    if args.manifest:
        m = load_manifest(args.manifest, args.seed, args.set)
        graph = load_manifest_graph(m)
        counts = args.counts or m["split"].get("counts")
        if counts is None:
            raise UsageError("manifest split has explicit classes; pass --counts to resample")
        split = split_classes(graph, counts, rngs.stream(int(m["seed"]), "split"))
    elif args.data:
        if not args.counts:
            raise UsageError("--counts is required with --data")
        graph = load_dataset_dir(args.data)
        split = split_classes(graph, args.counts, rngs.stream(seed, "split"))
    else:
        raise UsageError("split needs --manifest or --data")
    text = json.dumps(split.to_dict(), sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    _emit(base=len(split.base_classes), validation=len(split.validation_classes),
          novel=len(split.novel_classes))
    print(text)
    return 0


def build_parser():
    p = _Parser(prog="cpt", description="Competence-progressive training for few-shot node classification.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, manifest_required=True):
        sp.add_argument("--manifest", required=manifest_required)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a manifest key (dotted path, JSON value)")
        sp.add_argument("--jobs", type=int, default=1)

    sp = sub.add_parser("train", help="train one run")
    common(sp)
    sp.add_argument("--variant", choices=VARIANTS)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="meta-test a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train and meta-test every variant over all seeds")
    common(sp)
    sp.add_argument("--variants", nargs="+", choices=VARIANTS)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("gen-sbm", help="write a synthetic stochastic-block-model dataset")
    sp.add_argument("--classes", type=int, required=True)
    sp.add_argument("--per-class", type=int, required=True)
    sp.add_argument("--intra", type=float, required=True)
    sp.add_argument("--inter", type=float, required=True)
    sp.add_argument("--feature-dim", type=int, default=16)
    sp.add_argument("--noise", type=float, default=1.0)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gen_sbm)

    sp = sub.add_parser("grad-check", help="finite-difference check of the encoder gradients")
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--epsilon", type=float, default=1e-5)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("split", help="draw a base/validation/novel class split")
    common(sp, manifest_required=False)
    sp.add_argument("--data", help="dataset directory (edges.tsv, features.bin, labels.txt)")
    sp.add_argument("--counts", type=int, nargs=3, metavar=("BASE", "VAL", "NOVEL"))
    sp.set_defaults(func=cmd_split)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "jobs", 1) < 1:
        return _fail("usage", "--jobs must be >= 1", 2)
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except (CPTError, OSError, ValueError) as exc:
        return _fail("runtime", exc, 1)


if __name__ == "__main__":
    sys.exit(main())
