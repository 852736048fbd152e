"""Command-line interface.

Every option can also be given in a ``key=value`` file passed with
``--config`` (keys are the long option names with ``-`` or ``_``); flags on
the command line win over the file.

Exit status: 0 success, 2 configuration error, 3 data error, 4 training error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .datasets import TIME_UNITS, prepare_uci
from .errors import ConfigError, DataError, SupaError
from .evaluator import (DISTURBANCE_ETAS, EvalConfig, PopularityScorer, MetricRow, chronological_split,
                        compute_metrics, format_table, observe_for_eval, rank_edges, run_disturbance_protocol,
                        run_dynamic_protocol, run_link_prediction, write_metrics_csv)
from .graph import read_edge_list
from .model import HyperParams, Supa, tau_for_decay
from .params import AdamState, read_checkpoint, write_checkpoint
from .schema import load_schemas
from .trainer import TrainerConfig, run_inslearn

log = logging.getLogger("supa")

DEFAULT_SEED = 20240101


# -- argument plumbing ------------------------------------------------------------


def read_config_file(path: str) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    out = {}
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _add_model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--schemas", required=False, help="metapath schema file")
    g.add_argument("--dim", type=int, default=128)
    g.add_argument("--walks", "-k", type=int, default=4, help="walks per interactive node")
    g.add_argument("--walk-length", "-l", type=int, default=4)
    g.add_argument("--n-neg", type=int, default=5)
    g.add_argument("--decay-level", type=float, default=0.3, help="tau is the age where the decay reaches this level")
    g.add_argument("--tau", type=float, default=None, help="staleness threshold (overrides --decay-level)")
    g.add_argument("--lr", type=float, default=3e-3)
    g.add_argument("--weight-decay", type=float, default=1e-4)
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g = p.add_argument_group("training")
    g.add_argument("--s-batch", type=int, default=1024)
    g.add_argument("--n-iter", type=int, default=30)
    g.add_argument("--i-valid", type=int, default=8)
    g.add_argument("--s-valid", type=int, default=150)
    g.add_argument("--mu", type=int, default=3)


def _add_eval_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("evaluation")
    g.add_argument("--unfiltered", action="store_true", help="keep already-linked nodes among the candidates")
    g.add_argument("--sampled", type=int, nargs="?", const=100, default=None, metavar="N",
                   help="rank against N sampled candidates (100 if N is omitted) instead of all")
    g.add_argument("--keep-unseen", action="store_true",
                   help="also rank evaluation edges touching nodes absent from the training graph")
    g.add_argument("--metrics", help="write metric rows to this CSV file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supa", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file of option defaults")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train with the batch-sequential workflow and write a checkpoint")
    p.add_argument("--edges", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--split", action="store_true",
                   help="train on the first 80%% only and score the 1%% / 19%% slices")
    p.add_argument("--neighbor-cap", type=int, default=None)
    _add_model_args(p)
    _add_eval_args(p)

    p = sub.add_parser("evaluate", help="score the held-out 19%% of an edge file with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    _add_eval_args(p)

    p = sub.add_parser("dynamic-eval", help="train on part i, evaluate on part i+1 over 10 parts")
    p.add_argument("--edges", required=True)
    p.add_argument("--parts", type=int, default=10)
    _add_model_args(p)
    _add_eval_args(p)

    p = sub.add_parser("disturbance-eval", help="80/1/19 protocol under a sweep of neighbor caps")
    p.add_argument("--edges", required=True)
    p.add_argument("--etas", default=",".join("inf" if e is None else str(e) for e in DISTURBANCE_ETAS))
    _add_model_args(p)
    _add_eval_args(p)

    p = sub.add_parser("recommend", help="top-K candidates for a node under a relation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--relation", required=True)
    p.add_argument("-K", "--top", type=int, default=10)

    p = sub.add_parser("export", help="write inference-form embeddings for one relation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--relation", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint summary as JSON")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("prepare-uci", help="convert the CollegeMsg (UC Irvine) messages into an edge list")
    p.add_argument("--out", required=True)
    p.add_argument("--source", default=None, help="CollegeMsg csv(.gz); defaults to the networkx-temporal copy")
    p.add_argument("--time-unit", choices=sorted(TIME_UNITS), default="days")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        choices = parser._subparsers._group_actions[0].choices
        command = next((a for a in argv if a in choices), None)
        if command is not None:
            _apply_config(choices[command], command, read_config_file(known.config))
    return parser.parse_args(argv)


def _apply_config(sub: argparse.ArgumentParser, command: str, values: dict[str, str]) -> None:
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        action = known.get(key)
        if action is None or key == "help":
            raise ConfigError(f"unknown config key {key!r} for command {command}")
        if action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
        elif action.const is True:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = raw
        # satisfied by the file, so no longer required on the command line
        action.required = False
    sub.set_defaults(**defaults)


# -- builders ---------------------------------------------------------------------


def _require(args, name):
    if getattr(args, name, None) in (None, ""):
        raise ConfigError(f"--{name.replace('_', '-')} is required")
    return getattr(args, name)


def hyperparams(args) -> HyperParams:
    tau = args.tau if args.tau is not None else tau_for_decay(args.decay_level)
    return HyperParams(dim=args.dim, walks=args.walks, walk_length=args.walk_length, n_neg=args.n_neg, tau=tau)


def trainer_config(args) -> TrainerConfig:
    return TrainerConfig(s_batch=args.s_batch, n_iter=args.n_iter, i_valid=args.i_valid,
                         s_valid=args.s_valid, mu=args.mu)


def eval_config(args, seed: int) -> EvalConfig:
    if args.sampled is not None and args.sampled < 1:
        raise ConfigError("--sampled must be positive")
    return EvalConfig(filtered=not args.unfiltered, n_sampled=args.sampled, seed=seed,
                      drop_unseen=not args.keep_unseen)


def load_edges(path: str):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"edge file not found: {p}")
    edges, tables = read_edge_list(p)
    if not edges:
        raise DataError(f"{p}: no edges")
    return edges, tables


def model_factory(args, tables, neighbor_cap=None):
    schemas = load_schemas(_require(args, "schemas"), tables)
    hp = hyperparams(args)
    adam = AdamState(lr=args.lr, weight_decay=args.weight_decay)

    def make(eta=neighbor_cap):
        model = Supa(tables, schemas, hp, seed=args.seed, adam=AdamState(**vars(adam)), neighbor_cap=eta)
        model.eval_config = EvalConfig(seed=args.seed)
        return model

    return make


def _train_fn(cfg: TrainerConfig):
    return lambda model, edges: run_inslearn(edges, cfg, model)


def _report(rows, args) -> None:
    print(format_table(rows))
    if args.metrics:
        write_metrics_csv(args.metrics, rows)
        log.info("metrics written to %s", args.metrics)


def _relation(tables, name: str) -> int:
    try:
        return tables.edge_types.index(name)
    except ValueError:
        raise ConfigError(f"unknown relation {name!r}; known: {', '.join(tables.edge_types)}") from None


# -- commands -----------------------------------------------------------------------


def cmd_train(args) -> int:
    edges, tables = load_edges(args.edges)
    make = model_factory(args, tables, args.neighbor_cap)
    model = make()
    cfg = trainer_config(args)
    if args.split:
        res = run_link_prediction(edges, model, _train_fn(cfg), eval_config(args, args.seed),
                                  eta=args.neighbor_cap, seed=args.seed)
        outcomes = res.outcomes
        rows = [res.valid, res.test, res.baseline_valid, res.baseline_test]
    else:
        outcomes = run_inslearn(edges, cfg, model)
        rows = []
    stops = {}
    for o in outcomes:
        stops[o.stop_reason] = stops.get(o.stop_reason, 0) + 1
    log.info("trained %d batches (%s)", len(outcomes), ", ".join(f"{k}={v}" for k, v in sorted(stops.items())))
    write_checkpoint(args.out, model.snapshot())
    log.info("checkpoint written to %s", args.out)
    if rows:
        _report(rows, args)
    return 0


def cmd_evaluate(args) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    model = Supa.from_checkpoint(ckpt)
    edges, _ = read_edge_list_with(args.edges, model.tables)
    train, valid, test = chronological_split(edges)
    cfg = eval_config(args, args.seed)
    if cfg.drop_unseen:
        known = set(ckpt.node_ids)
        valid, test = ([e for e in part if e.src.id in known and e.dst.id in known] for part in (valid, test))
    if not test:
        raise DataError("no test edge to evaluate")
    for e in train + valid:
        model.store.add_edge(e)
    model._sync_nodes()
    idx = observe_for_eval(model, test)
    ranks = rank_edges(model, idx, cfg)
    base = rank_edges(PopularityScorer(model.store), idx, cfg, store=model.store)
    rows = [MetricRow("link", 2, model.store.neighbor_cap, compute_metrics(ranks), len(test), ckpt.seed),
            MetricRow("link-pop", 2, model.store.neighbor_cap, compute_metrics(base), len(test), ckpt.seed)]
    log.info("candidate mode: %s, %s", "filtered" if cfg.filtered else "unfiltered",
             "all of type" if cfg.n_sampled is None else f"{cfg.n_sampled} sampled")
    _report(rows, args)
    return 0


def read_edge_list_with(path, tables):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"edge file not found: {p}")
    return read_edge_list(p, tables)


def cmd_dynamic(args) -> int:
    edges, tables = load_edges(args.edges)
    model = model_factory(args, tables)()
    rows = run_dynamic_protocol(edges, model, _train_fn(trainer_config(args)),
                                eval_config(args, args.seed), seed=args.seed, n_parts=args.parts)
    _report(rows, args)
    return 0


def parse_etas(text: str) -> list[int | None]:
    out = []
    for part in text.split(","):
        part = part.strip().lower()
        if part in ("inf", "none", "∞"):
            out.append(None)
            continue
        try:
            eta = int(part)
        except ValueError:
            raise ConfigError(f"bad neighbor cap {part!r}") from None
        if eta < 1:
            raise ConfigError("neighbor caps must be positive")
        out.append(eta)
    return out


def cmd_disturbance(args) -> int:
    edges, tables = load_edges(args.edges)
    make = model_factory(args, tables)
    rows = run_disturbance_protocol(edges, make, _train_fn(trainer_config(args)), parse_etas(args.etas),
                                    eval_config(args, args.seed), seed=args.seed)
    _report(rows, args)
    return 0


def cmd_recommend(args) -> int:
    if args.top < 1:
        raise ConfigError("-K must be positive")
    model = Supa.from_checkpoint(read_checkpoint(args.checkpoint))
    r = _relation(model.tables, args.relation)
    try:
        user = model.store.lookup(args.user)
    except KeyError as exc:
        raise DataError(str(exc.args[0])) from None
    for item, score in model.recommend(user, r, args.top):
        print(f"{model.store.ids[item]}\t{score:.10g}")
    return 0


def cmd_export(args) -> int:
    model = Supa.from_checkpoint(read_checkpoint(args.checkpoint))
    r = _relation(model.tables, args.relation)
    nodes = [i for i in range(len(model.store)) if model.params.context_row(i, r) >= 0]
    skipped = len(model.store) - len(nodes)
    emb = model.embeddings(r, nodes) if nodes else np.zeros((0, model.params.dim))
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for i, vec in zip(nodes, emb):
            ref = model.store.node(i)
            values = " ".join(repr(float(x)) for x in vec)
            fh.write(f"{ref.id}\t{model.tables.node_types[ref.type_id]}\t{args.relation}\t{values}\n")
    if skipped:
        log.warning("%d nodes have no %r context and were skipped", skipped, args.relation)
    log.info("exported %d embeddings to %s", len(nodes), args.out)
    return 0


def cmd_inspect(args) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    counts = {}
    for t in ckpt.node_types:
        name = ckpt.tables["node_types"][t]
        counts[name] = counts.get(name, 0) + 1
    summary = {
        "version": ckpt.version, "dim": ckpt.dim, "seed": ckpt.seed,
        "nodes": len(ckpt.node_ids), "nodes_by_type": counts,
        "contexts": int(len(ckpt.arrays["ctx_keys"])),
        "optimizer_steps": ckpt.adam["step"], "alpha": [float(a) for a in ckpt.arrays["alpha"][:, 0]],
        "tables": ckpt.tables, "hyperparams": ckpt.hyperparams, "schemas": ckpt.extra.get("schemas", []),
        "finite": bool(all(np.all(np.isfinite(a)) for a in ckpt.arrays.values() if a.dtype.kind == "f")),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_prepare_uci(args) -> int:
    n = prepare_uci(args.out, args.source, args.time_unit)
    log.info("wrote %d edges to %s", n, args.out)
    return 0


COMMANDS = {
    "train": cmd_train, "evaluate": cmd_evaluate, "dynamic-eval": cmd_dynamic,
    "disturbance-eval": cmd_disturbance, "recommend": cmd_recommend, "export": cmd_export,
    "inspect-checkpoint": cmd_inspect, "prepare-uci": cmd_prepare_uci,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SupaError as exc:
        print(f"supa: error: {exc}", file=sys.stderr)
        return exc.exit_code
    level = logging.INFO if args.verbose == 0 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except SupaError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
