"""Command-line entry point: ``contagion-kg <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .errors import DataError, NumericalError

log = logging.getLogger("contagion_kg")

CONFIG_VERSION = 1
CONFIG_SECTIONS = ("dataset", "model", "train")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    """Strict JSON config: a ``version`` field plus optional dataset/model/train sections."""
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != CONFIG_VERSION:
        raise UsageError(f"config must be a JSON object with \"version\": {CONFIG_VERSION}")
    unknown = set(doc) - {"version", *CONFIG_SECTIONS}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return {k: doc[k] for k in CONFIG_SECTIONS if k in doc}


def _section(args, name: str, cls) -> dict:
    sec = dict(args.config_doc.get(name, {}))
    unknown = set(sec) - set(cls.__dataclass_fields__)
    if unknown:
        raise UsageError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    return sec


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(args, payload: dict, rows: list[dict] | None = None) -> None:
    """Write a report to stdout in the requested format."""
    if args.format == "json":
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return
    rows = rows if rows is not None else [{"key": k, "value": v} for k, v in payload.items()]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    sys.stdout.write(buf.getvalue())


def _dataset_config(args):
    from .forge import DatasetConfig

    sec = _section(args, "dataset", DatasetConfig)
    profile = args.profile or sec.pop("profile", "findkg_like")
    sec.pop("profile", None)
    if args.n is not None:
        sec["n_instructions"] = args.n
    sec["seed"] = args.seed
    if "graph_size_range" in sec:
        sec["graph_size_range"] = tuple(sec["graph_size_range"])
    return DatasetConfig.for_profile(profile, **sec)


def _load_model(path):
    from .fusion import ModelState

    return ModelState.load(path)


def _pick(instances, key: str | None):
    if key is None:
        return instances[0]
    for inst in instances:
        if inst.id == key:
            return inst
    if key.isdigit() and int(key) < len(instances):
        return instances[int(key)]
    from .errors import NodeNotFound

    raise NodeNotFound(key)


def _scorer(args):
    from .evaluation import oracle_scorer
    from .model import ModelScorer

    return oracle_scorer if args.model is None else ModelScorer(_load_model(args.model))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_kg(args) -> int:
    from .forge import plant_structures, write_queries
    from .graph import write_csv_graph

    cfg = _dataset_config(args)
    syn = plant_structures(cfg)
    out = _out(args)
    write_csv_graph(syn.graph, out / "kg.nodes.csv", out / "kg.edges.csv")
    write_queries(syn.queries, out / "kg.queries.csv")
    _emit(args, {"nodes": len(syn.graph), "edges": len(syn.graph.edges), "queries": len(syn.queries), "seed": cfg.seed})
    return 0


def cmd_gen_dataset(args) -> int:
    from .forge import SyntheticKG, build_dataset, dataset_manifest, read_queries, write_dataset
    from .graph import read_csv_graph

    cfg = _dataset_config(args)
    syn = None
    if args.kg:
        kg = Path(args.kg)
        queries = read_queries(kg / "kg.queries.csv")
        syn = SyntheticKG(read_csv_graph(kg / "kg.nodes.csv", kg / "kg.edges.csv"), queries)
        if args.n is None:
            cfg.n_instructions = len(queries)
    data = build_dataset(cfg, syn)
    manifest = dataset_manifest(cfg, data)
    write_dataset(data, _out(args) / "dataset.jsonl", manifest)
    summary = {k: manifest[k] for k in ("n_instructions", "factual", "intervention", "seed")}
    summary.update({f"topic:{t}": c for t, c in manifest["topics"].items()})
    _emit(args, summary)
    return 0


def _graph_arg(args):
    from .graph import read_csv_graph, read_jsonl_graph

    if args.graph:
        return read_jsonl_graph(args.graph)
    if args.nodes and args.edges:
        return read_csv_graph(args.nodes, args.edges)
    raise UsageError("give --graph FILE.jsonl or --nodes/--edges CSV files")


def cmd_intervene(args) -> int:
    from .graph import dfs_extract
    from .intervention import build_intervention_set, write_intervention_set

    g = _graph_arg(args)
    s = build_intervention_set(dfs_extract(g, args.source, args.target, args.max_depth, args.attach_hops))
    write_intervention_set(s, _out(args) / "intervention_set.jsonl")
    rows = [{"intervened_node": "", "label": s.factual_label}]
    rows += [{"intervened_node": iv.node, "label": iv.label} for iv in s.interventions]
    _emit(args, {"factual_label": s.factual_label, "interventions": {iv.node: iv.label for iv in s.interventions}}, rows)
    return 0


def cmd_classify(args) -> int:
    from .fixtures import table1_graph
    from .graph import dfs_extract
    from .intervention import build_intervention_set, classify_nodes, read_intervention_set

    if args.set:
        s = read_intervention_set(args.set)
    elif args.fixture == "table1":
        s = build_intervention_set(dfs_extract(table1_graph(), "A", "C"))
    else:
        s = build_intervention_set(dfs_extract(_graph_arg(args), args.source, args.target))
    p = classify_nodes(s)
    if args.format == "json":
        _emit(args, p.to_dict())
    elif args.format == "csv":
        _emit(args, {}, [{"node": v, "effect": p.effects[v], "class": "X" if v in p.causal else "Z"} for v in sorted(p.effects)])
    else:
        print("X={" + ",".join(sorted(p.causal)) + "}")
        print("Z={" + ",".join(sorted(p.non_causal)) + "}")
    return 0


def cmd_train(args) -> int:
    from .forge import read_dataset
    from .fusion import Hyper, ModelState, build_vocab
    from .trainer import TrainConfig, train

    data = read_dataset(args.dataset)
    hyper = Hyper(**_section(args, "model", Hyper))
    tsec = _section(args, "train", TrainConfig)
    tsec["seed"] = args.seed
    for key, val in (("epochs", args.epochs), ("learning_rate", args.lr)):
        if val is not None:
            tsec[key] = val
    cfg = TrainConfig(**tsec)
    types = sorted({n.entity_type for inst in data for n in inst.graph_set.factual.graph.nodes.values()})
    init = ModelState.init(hyper, build_vocab(inst.sequence() for inst in data), types, seed=args.seed)
    m, history = train(data, cfg, init)
    out = _out(args)
    m.save(out / "model.json")
    (out / "history.csv").write_text(history.to_csv(), encoding="utf-8")
    means = history.epoch_means()
    _emit(args, {"steps": len(history.steps), "epoch_l_joint": means, "checkpoint": m.digest()},
          [{"epoch": i + 1, "l_joint": v} for i, v in enumerate(means)])
    return 0


def cmd_eval(args) -> int:
    from .evaluation import evaluate_instances
    from .forge import read_dataset

    report = evaluate_instances(read_dataset(args.dataset), _scorer(args))
    (_out(args) / "eval.json").write_text(report.to_json(), encoding="utf-8")
    _emit(args, report.summary(), report.per_instance)
    return 0


def _path_for(args):
    from .evaluation import oracle_scorer
    from .forge import read_dataset
    from .model import ModelScorer
    from .pathway import extract_path

    inst = _pick(read_dataset(args.dataset), args.id)
    m = _load_model(args.model) if args.model else None
    _, scores = (ModelScorer(m) if m else oracle_scorer)(inst)
    return inst, m, scores, extract_path(inst.graph_set.factual, scores)


def cmd_infer_path(args) -> int:
    inst, _, scores, path = _path_for(args)
    doc = {"id": inst.id, "nodes": path.nodes, "intensities": path.intensities, "risk_estimate": scores.estimate}
    (_out(args) / "path.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(args, doc, [{"source": a, "target": b, "intensity": x} for a, b, x in zip(path.nodes, path.nodes[1:], path.intensities)])
    return 0


def cmd_export_sankey(args) -> int:
    from .sankey import export_sankey, validate_sankey

    inst, m, scores, path = _path_for(args)
    doc = export_sankey(
        path, inst.graph_set.factual, scores, inst.explanation,
        query_id=inst.id, seed=args.seed, checkpoint=m.digest() if m else None,
    )
    validate_sankey(doc)
    target = _out(args) / "sankey.json"
    doc.save(target)
    _emit(args, {"written": str(target), "nodes": len(doc.nodes), "links": len(doc.links)})
    return 0


def cmd_robustness(args) -> int:
    from .evaluation import random_confounder_test, subset_of_data_test
    from .forge import read_dataset

    data = read_dataset(args.dataset)
    if args.test == "confounder":
        delta = random_confounder_test(data, args.n_add, args.seed, _scorer(args))
    else:
        delta = subset_of_data_test(data, args.drop_fraction, args.seed, _scorer(args))
    (_out(args) / f"robustness_{args.test}.json").write_text(json.dumps(delta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    rows = [{"metric": k, "before": delta["before"][k], "after": delta["after"][k], "delta": delta["delta"][k]}
            for k in ("acc", "auc", "iou_mean")]
    _emit(args, delta, rows)
    return 0


def cmd_gradcheck(args) -> int:
    from .errors import NonFiniteLoss
    from .fusion import Hyper, ModelState, build_vocab
    from .gradcheck import finite_difference_report, loss_functions, toy_instance

    inst = toy_instance(args.seed, args.nodes)
    hyper = Hyper(**{"d": 16, "J": 4, **_section(args, "model", Hyper)})
    m = ModelState.init(hyper, build_vocab([inst.sequence()]), ["bank", "fund"], seed=args.seed)
    results = {}
    for name, fn in loss_functions(inst).items():
        results[name] = finite_difference_report(fn, m, args.eps, args.coords, args.seed).max_rel_err
    worst = max(results.values())
    _emit(args, {**{f"{k}_max_rel_err": v for k, v in results.items()}, "max_rel_err": worst, "tolerance": args.tol},
          [{"loss": k, "max_rel_err": v} for k, v in results.items()])
    if worst > args.tol:
        raise NonFiniteLoss(f"gradient audit failed: max relative error {worst:.3e} > {args.tol:g}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

GLOBAL_DEFAULTS = {"seed": 0, "config": None, "out": ".", "format": None, "verbose": False}


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # the copies on each subcommand suppress their defaults so they never
    # overwrite a flag given before the subcommand name
    dflt = (lambda k: argparse.SUPPRESS) if suppress else GLOBAL_DEFAULTS.get
    g = _Parser(add_help=False)
    g.add_argument("--seed", type=int, default=dflt("seed"))
    g.add_argument("--config", default=dflt("config"), help="strict JSON config with a version field")
    g.add_argument("--out", default=dflt("out"), help="output directory")
    g.add_argument("--format", choices=("json", "csv", "text"), default=dflt("format"), help="report format on stdout")
    g.add_argument("-v", "--verbose", action="store_true", default=dflt("verbose"))
    return g


def build_parser() -> argparse.ArgumentParser:
    glob = _global_flags(suppress=True)
    p = _Parser(prog="contagion-kg", description="Causal risk-contagion toolkit.", parents=[_global_flags(suppress=False)])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, parents=[glob])
        sp.set_defaults(func=fn)
        return sp

    for name, fn, help_ in (("gen-kg", cmd_gen_kg, "plant a synthetic KG"), ("gen-dataset", cmd_gen_dataset, "build an instruction dataset")):
        sp = add(name, fn, help_)
        sp.add_argument("--profile", choices=("findkg_like", "supplychain_like", "custom"), default=None)
        sp.add_argument("-n", type=int, default=None, help="number of instructions / planted queries")
        if name == "gen-dataset":
            sp.add_argument("--kg", default=None, help="directory written by gen-kg")

    def graph_args(sp, required=True):
        sp.add_argument("--graph", help="graph JSONL")
        sp.add_argument("--nodes", help="nodes CSV")
        sp.add_argument("--edges", help="edges CSV")
        sp.add_argument("--source", required=required)
        sp.add_argument("--target", required=required)

    sp = add("intervene", cmd_intervene, "build the intervention set of a source-target pair")
    graph_args(sp)
    sp.add_argument("--max-depth", type=int, default=6)
    sp.add_argument("--attach-hops", type=int, default=1)

    sp = add("classify", cmd_classify, "split nodes into causal X and non-causal Z")
    graph_args(sp, required=False)
    sp.add_argument("--set", help="intervention set JSONL")
    sp.add_argument("--fixture", choices=("table1",))

    sp = add("train", cmd_train, "train a model on a dataset")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)

    for name, fn, help_ in (
        ("eval", cmd_eval, "ACC/AUC/IoU of a model (or the oracle) on a dataset"),
        ("infer-path", cmd_infer_path, "extract the risk path of one instruction"),
        ("export-sankey", cmd_export_sankey, "write Sankey data for one instruction"),
        ("robustness", cmd_robustness, "confounder / subset-of-data perturbation deltas"),
    ):
        sp = add(name, fn, help_)
        sp.add_argument("--dataset", required=True)
        sp.add_argument("--model", default=None, help="checkpoint; the reachability oracle when omitted")
        if name in ("infer-path", "export-sankey"):
            sp.add_argument("--id", default=None, help="instruction id or index (default: first)")
        if name == "robustness":
            sp.add_argument("--test", choices=("confounder", "subset"), default="confounder")
            sp.add_argument("--n-add", type=int, default=3)
            sp.add_argument("--drop-fraction", type=float, default=0.2)

    sp = add("gradcheck", cmd_gradcheck, "finite-difference audit of the loss gradients")
    sp.add_argument("--eps", type=float, default=1e-5)
    sp.add_argument("--coords", type=int, default=200)
    sp.add_argument("--nodes", type=int, default=4)
    sp.add_argument("--tol", type=float, default=1e-4)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        if args.format is None:
            args.format = "text" if args.command == "classify" else "json"
        args.config_doc = load_config(args.config)
        import torch

        torch.set_num_threads(1)  # bitwise-reproducible reductions
        return args.func(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # bad values inside a config section or a flag
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
