"""Command line entry point: ``navip prepare | train | evaluate | report``.

Every flag can also come from ``--config FILE`` holding ``key = value``
lines (``#`` starts a comment); flags given on the command line win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .aggregation import (
    DEFAULT_NORMALIZATION,
    ConfigurationError,
    build_operator,
    parse_normalization,
    parse_strategy,
)
from .data import FORMATS, DataFormatError, prepare_dataset, read_bundle, write_bundle
from .evaluation import evaluate, summarize
from .graph import GraphError, build_graph
from .model import load_checkpoint, save_checkpoint, swap_operator_inference
from .plotting import plot_comparison, plot_loss_trace
from .propensity import estimate_propensity, write_propensity_csv
from .report import load_rows, metric_columns, render_csv, render_text, rows_from_summary
from .training import TrainConfig, TrainingError, train, write_loss_trace

log = logging.getLogger("navip")


class CommandError(Exception):
    pass


def read_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise CommandError(f"config file not found: {p}")
    out = {}
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CommandError(f"{p}:{lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_int_list(text: str) -> list[int]:
    """``"1..10"``, ``"1,2,5"`` or a mix such as ``"1..3,7"``."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty integer list {text!r}")
    return out


def parse_negatives(text):
    if str(text).lower() in ("all", "none", "0"):
        return None
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("--num-negatives must be positive or 'all'")
    return n


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, args: argparse.Namespace, outputs, extra=None) -> Path:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config", "verbose")}
    doc = {
        "command": command,
        "navip_version": __version__,
        "flags": flags,
        "outputs": {Path(p).name: _sha256(Path(p)) for p in outputs},
    }
    if extra:
        doc.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise CommandError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise CommandError(f"{what} not found: {p}")
    return p


def cmd_prepare(args) -> int:
    _require(args, "input", "out")
    src = _existing(args.input, "input file")
    ds = prepare_dataset(
        src, args.format, min_degree=args.min_degree,
        test_frac=args.test_frac, val_frac=args.val_frac, seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    graph = build_graph(ds.train, ds.num_users, ds.num_items)
    table = estimate_propensity(graph)
    write_propensity_csv(table, out / "propensity.csv", ds.item_ids)
    write_bundle(ds, out)
    files = [out / f for f in ("train.tsv", "val.tsv", "test.tsv", "user_ids.tsv", "item_ids.tsv", "propensity.csv")]
    write_manifest(out, "prepare", args, files, extra={"dataset": ds.metadata})
    m = ds.metadata
    print(f"prepared {m['num_users']} users, {m['num_items']} items, {m['num_interactions']} interactions "
          f"(train {m['num_train']}, val {m['num_validation']}, test {m['num_test']}) -> {out}")
    return 0


def _load_graph(bundle_dir):
    ds = read_bundle(_existing(bundle_dir, "bundle directory"))
    graph = build_graph(ds.train, ds.num_users, ds.num_items)
    return ds, graph, estimate_propensity(graph)


def cmd_train(args) -> int:
    _require(args, "bundle", "out")
    ds, graph, table = _load_graph(args.bundle)
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
        l2_weight=args.l2, loss_kind=args.loss, seed=args.seed,
        strategy=args.strategy, normalization=args.norm,
        dim=args.dim, depth=args.depth, init_scale=args.init_scale,
    )
    result = train(graph, table, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out / "checkpoint.bin")
    write_loss_trace(result.loss_trace, out / "loss.csv")
    files = [out / "checkpoint.bin", out / "loss.csv"]
    if args.figure:
        files.append(plot_loss_trace(result.loss_trace, out / "loss.png"))
    write_manifest(out, "train", args, files, extra={
        "resolved": {"strategy": cfg.strategy.value, "normalization": cfg.normalization.value,
                     "loss": cfg.loss_kind, "layer_coeffs": list(result.model.layer_coeffs)},
    })
    print(f"trained {cfg.strategy.value}/{cfg.normalization.value} with {cfg.loss_kind} for {cfg.epochs} "
          f"epochs, final loss {result.loss_trace[-1]:.5f} -> {out}")
    return 0


def _bundle_for(args) -> str:
    if args.bundle:
        return args.bundle
    man = Path(args.checkpoint).parent / "manifest.json"
    if man.exists():
        b = json.loads(man.read_text()).get("flags", {}).get("bundle")
        if b:
            return b
    raise CommandError("--bundle not given and not recorded next to the checkpoint")


def cmd_evaluate(args) -> int:
    _require(args, "checkpoint", "out")
    model = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    ds, graph, table = _load_graph(_bundle_for(args))
    if (graph.num_users, graph.num_items) != (model.num_users, model.num_items):
        raise CommandError(
            f"checkpoint is {model.num_users}x{model.num_items}, bundle is {graph.num_users}x{graph.num_items}"
        )
    strategies = [parse_strategy(s) for s in args.eval_strategies.split(",") if s.strip()]
    if args.eval_norms:
        norms = [parse_normalization(n) for n in args.eval_norms.split(",")]
        if len(norms) != len(strategies):
            raise CommandError("--eval-norms needs one entry per eval strategy")
    else:
        norms = [DEFAULT_NORMALIZATION[s] for s in strategies]
    split = "validation" if args.split in ("val", "validation") else "test"
    positives = ds.split(split)
    other = ds.split("test" if split == "validation" else "validation")
    ks = parse_int_list(args.k)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files, problems = [], []
    summary_doc = {"split": split, "checkpoint": str(args.checkpoint),
                   "trained_with": {"strategy": model.strategy, "normalization": model.normalization},
                   "strategies": {}}
    for strat, norm in zip(strategies, norms):
        op = build_operator(graph, table, strat, norm)
        final = swap_operator_inference(model, op)
        label = strat.value if not args.eval_norms else f"{strat.value}-{norm.value}"
        reports = []
        for seed in args.seeds:
            rep = evaluate(final, graph, positives, k_list=ks, num_negatives=args.num_negatives,
                           seed=seed, exclude=other, strategy=strat.value,
                           normalization=norm.value, split=split)
            problems += [f"{label} seed {seed}: {p}" for p in rep.check()]
            path = out / f"report_{label}_seed{seed}.json"
            path.write_text(rep.to_json())
            files.append(path)
            reports.append(rep)
        summary_doc["strategies"][label] = summarize(reports)

    (out / "summary.json").write_text(json.dumps(summary_doc, indent=2, sort_keys=True) + "\n")
    rows = rows_from_summary(summary_doc)
    cols = metric_columns(summary_doc["strategies"][rows[0].label])
    (out / "table.txt").write_text(render_text(rows, cols))
    (out / "table.csv").write_text(render_csv(rows, cols))
    files += [out / "summary.json", out / "table.txt", out / "table.csv"]
    write_manifest(out, "evaluate", args, files)
    print(render_text(rows, cols), end="")
    if problems:
        for p in problems:
            print(f"invariant violated: {p}", file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    if not args.runs:
        raise CommandError("report needs at least one run directory")
    rows = load_rows(args.runs)
    segment = "" if args.segment == "overall" else f"_{args.segment}"
    cols = [c for r in rows[:1] for c in metric_columns(r.means, segment)]
    text = render_csv(rows, cols) if args.emit == "csv" else render_text(rows, cols)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        figure = args.figure or str(out.with_suffix(".png"))
    else:
        sys.stdout.write(text)
        figure = args.figure
    if figure:
        plot_comparison(rows, figure, segments=("", "_head", "_tail"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="navip", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"navip {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value file; command-line flags override it")
        p.add_argument("-v", "--verbose", action="store_true")
        p.set_defaults(func=func)
        return p

    p = add("prepare", cmd_prepare, "filter a raw log and write a split bundle")
    p.add_argument("--input")
    p.add_argument("--format", choices=FORMATS, default="movielens_100k")
    p.add_argument("--min-degree", type=int, default=10)
    p.add_argument("--test-frac", type=float, default=0.05)
    p.add_argument("--val-frac", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--out")

    p = add("train", cmd_train, "train layer-0 embeddings under one aggregation operator")
    p.add_argument("--bundle")
    p.add_argument("--out")
    p.add_argument("--strategy", default="mean", choices=["mean", "propensity", "navip"])
    p.add_argument("--norm", default=None, help="symmetric | random-walk (default depends on strategy)")
    p.add_argument("--loss", default="bpr", choices=["bpr", "ips-bpr"])
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.003)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--init-scale", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0, help="run seed (init and sampling)")
    p.add_argument("--figure", type=int, default=0, choices=[0, 1], help="also write loss.png")

    p = add("evaluate", cmd_evaluate, "HR/NDCG of a checkpoint under one or more aggregation operators")
    p.add_argument("--checkpoint")
    p.add_argument("--bundle")
    p.add_argument("--eval-strategies", default="mean,propensity,navip")
    p.add_argument("--eval-norms", default=None)
    p.add_argument("--split", default="test", choices=["test", "val", "validation"])
    p.add_argument("--seeds", type=parse_int_list, default=[0])
    p.add_argument("--k", default="5,10,20")
    p.add_argument("--num-negatives", type=parse_negatives, default=99)
    p.add_argument("--out")

    p = add("report", cmd_report, "render a comparison table (and figure) over evaluate runs")
    p.add_argument("runs", nargs="*")
    p.add_argument("--emit", choices=["text", "csv"], default="text")
    p.add_argument("--segment", choices=["overall", "head", "tail"], default="overall")
    p.add_argument("--out")
    p.add_argument("--figure")
    return parser


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = read_config(args.config)
        except CommandError as e:
            print(f"navip: error: {e}", file=sys.stderr)
            return 2
        sp = _subparser(parser, args.command)
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            print(f"navip: error: unknown config keys: {', '.join(unknown)}", file=sys.stderr)
            return 2
        sp.set_defaults(**cfg)
        args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, FileNotFoundError, DataFormatError, GraphError, ConfigurationError,
            TrainingError, ValueError) as e:
        print(f"navip: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
