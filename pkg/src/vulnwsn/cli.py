"""Command line entry point: one subcommand per pipeline stage.

Exit status is 0 on success, 1 on validation/usage errors and 2 on IO errors.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import __version__
from .dataset import join, load_dataset, run_cv, save_dataset, undersample
from .evalstats import MeasureSet, aggregate, render_csv, render_table, table_rows, wilcoxon_rank_sum
from .extractor import extract_tree
from .facts import load_facts, save_facts
from .learners import LEARNER_KINDS, TECHNIQUE_NAMES, make_learner
from .netmetrics import METRIC_NAMES, feature_table, load_features, save_features
from .vulnlabels import DiffDirectory, count_vulnerabilities, load_labels, load_records, save_labels
from .wsn import build_wsn, load_wsn, save_wsn

log = logging.getLogger("vulnwsn")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
SEED_MAX = 2**64 - 1


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---- stages -----------------------------------------------------------------

def stage_extract(root, ext, out):
    result = extract_tree(root, ext)
    save_facts(result.facts, out)
    return result


def stage_graph(facts_path, out):
    save_wsn(build_wsn(load_facts(facts_path)), out)


def stage_metrics(wsn_path, facts_path, out):
    rows = feature_table(load_wsn(wsn_path), load_facts(facts_path))
    save_features(rows, out)
    return rows


def stage_labels(advisories, bugs, diffs, facts_path, out):
    facts = load_facts(facts_path)
    table = count_vulnerabilities(
        load_records(advisories, "advisory"), load_records(bugs, "bug"), DiffDirectory(diffs), facts
    )
    save_labels(table, facts, out)
    return table


def stage_dataset(features, labels, balance, seed, out):
    labels = {cid: lab for cid, (_, lab) in load_labels(labels).items()}
    ds = join(load_features(features), labels)
    if balance == "under":
        ds = undersample(ds, seed)
    elif balance != "none":
        raise ValueError(f"unknown balance strategy {balance!r}")
    save_dataset(ds, out)
    return ds


def _jsonable(v):
    return v if isinstance(v, (int, float, str, bool, type(None))) else repr(v)


def stage_train_eval(dataset, models, repeats, folds, seed, hyper, out, threads=1):
    ds = load_dataset(dataset)
    results = []
    for kind in models:
        learner = make_learner(kind, seed=seed, **hyper)
        matrices = run_cv(ds, learner, repeats=repeats, k=folds, seed=seed, n_jobs=threads)
        agg = aggregate(matrices)
        results.append({
            "technique": TECHNIQUE_NAMES[kind],
            "model": kind,
            "params": {k: _jsonable(v) for k, v in sorted(learner.get_params().items())},
            "measures": agg.mean.as_dict(),
            "excluded": agg.excluded,
            "matrices": [{"tp": m.tp, "fp": m.fp, "tn": m.tn, "fn": m.fn} for m in matrices],
        })
    report = {
        "protocol": {
            "rows": len(ds),
            "positives": int(ds.y.sum()),
            "repeats": repeats,
            "folds": folds,
            "seed": seed,
            "seed_derivation": "splitmix64(seed + repeat) for folds; splitmix64(that + fold) for learners",
            "threshold": 0.5,
        },
        "results": results,
    }
    Path(out).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return report


def stage_wilcoxon(features, labels, out):
    feats = load_features(features)
    labels = load_labels(labels)
    rows = [f for f in feats if f.class_id in labels]
    lines = ["metric,u,p,method,significant"]
    for k, name in enumerate(METRIC_NAMES):
        xs = [r.values()[k] for r in rows if labels[r.class_id][1] == 1]
        ys = [r.values()[k] for r in rows if labels[r.class_id][1] == 0]
        res = wilcoxon_rank_sum(xs, ys)
        lines.append(f"{name},{res.u_statistic:.1f},{res.p_value:.6f},{res.method},{int(res.significant_at_0_05)}")
    Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _summary(report):
    return [(r["technique"], MeasureSet(**r["measures"])) for r in report["results"]]


def render_report(report, fmt):
    results = _summary(report)
    if fmt == "table":
        return render_table(results)
    if fmt == "csv":
        return render_csv(results)
    if fmt == "json":
        rows = table_rows(results)
        keys = ("technique", "acc_pct", "pr_pct", "fp_pct", "re_pct")
        return json.dumps([dict(zip(keys, r)) for r in rows], indent=2) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


# ---- pipeline config --------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    source: Path
    advisories: Path
    bugs: Path
    diffs: Path
    out: Path
    ext: str = ".ml"
    seed: int = 0
    models: tuple = LEARNER_KINDS
    balance: str = "under"
    repeats: int = 10
    folds: int = 10
    trees: int = 100
    hidden: int = 8
    epochs: int = 500
    lr: float = 0.1

    @property
    def hyper(self):
        return {"trees": self.trees, "hidden": self.hidden, "epochs": self.epochs, "lr": self.lr}


_PATH_KEYS = ("source", "advisories", "bugs", "diffs", "out")


def _coerce(name, raw):
    if name in _PATH_KEYS:
        return Path(raw)
    if name == "models":
        return _parse_models(raw)
    if name in ("seed", "repeats", "folds", "trees", "hidden", "epochs"):
        return _seed(raw) if name == "seed" else _positive_int(raw)
    if name == "lr":
        return float(raw)
    return raw


def load_config(path) -> PipelineConfig:
    """Flat ``key = value`` file; ``#`` starts a comment; relative paths resolve against the file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[pipeline]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ValueError(f"{path}: {exc}") from None
    known = {f.name for f in fields(PipelineConfig)}
    values = {}
    for key, raw in cp["pipeline"].items():
        if key not in known:
            raise ValueError(f"{path}: unknown config key {key!r}")
        try:
            values[key] = _coerce(key, raw.strip().strip('"'))
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ValueError(f"{path}: bad value for {key!r}: {exc}") from None
    missing = [k for k in _PATH_KEYS if k not in values]
    if missing:
        raise ValueError(f"{path}: missing config key(s) {', '.join(missing)}")
    for k in _PATH_KEYS:
        if not values[k].is_absolute():
            values[k] = path.parent / values[k]
    return PipelineConfig(**values)


def run_pipeline(cfg: PipelineConfig, threads=1):
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    p = {name: out / name for name in (
        "facts.jsonl", "wsn.json", "features.csv", "labels.csv", "dataset.csv",
        "wilcoxon.csv", "report.json", "report.txt",
    )}
    steps = [
        ("extract", lambda: stage_extract(cfg.source, cfg.ext, p["facts.jsonl"])),
        ("graph build", lambda: stage_graph(p["facts.jsonl"], p["wsn.json"])),
        ("metrics compute", lambda: stage_metrics(p["wsn.json"], p["facts.jsonl"], p["features.csv"])),
        ("labels ingest", lambda: stage_labels(cfg.advisories, cfg.bugs, cfg.diffs, p["facts.jsonl"], p["labels.csv"])),
        ("stats wilcoxon", lambda: stage_wilcoxon(p["features.csv"], p["labels.csv"], p["wilcoxon.csv"])),
        ("dataset build", lambda: stage_dataset(p["features.csv"], p["labels.csv"], cfg.balance, cfg.seed, p["dataset.csv"])),
        ("train-eval", lambda: stage_train_eval(
            p["dataset.csv"], cfg.models, cfg.repeats, cfg.folds, cfg.seed, cfg.hyper, p["report.json"], threads)),
    ]
    for name, fn in steps:
        try:
            fn()
        except Exception as exc:
            exc.stage = getattr(exc, "stage", name)
            raise
    report = json.loads(p["report.json"].read_text(encoding="utf-8"))
    p["report.txt"].write_text(render_report(report, "table"), encoding="utf-8")
    return p


# ---- argument parsing -------------------------------------------------------

def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _seed(s):
    v = int(s)
    if not 0 <= v <= SEED_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _parse_models(s):
    kinds = tuple(k.strip() for k in str(s).split(",") if k.strip())
    bad = [k for k in kinds if k not in LEARNER_KINDS]
    if not kinds or bad:
        raise argparse.ArgumentTypeError(f"models must be from {','.join(LEARNER_KINDS)}, got {s!r}")
    return kinds


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--threads", type=_positive_int, default=argparse.SUPPRESS,
                   help="bound on internal parallelism (default: all cores)")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _add_hyper(p):
    p.add_argument("--trees", type=_positive_int, default=100, help="random forest size")
    p.add_argument("--hidden", type=_positive_int, default=8, help="hidden units of the network")
    p.add_argument("--epochs", type=_positive_int, default=500, help="gradient descent epochs")
    p.add_argument("--lr", type=float, default=0.1, help="gradient descent learning rate")


def build_parser():
    common = _common()
    parser = _Parser(prog="vulnwsn", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", parents=[common], help="extract code facts from a MiniLang tree")
    p.add_argument("root")
    p.add_argument("--ext", default=".ml")
    p.add_argument("-o", "--output", required=True)

    g = sub.add_parser("graph", parents=[common], help="weighted software network")
    gs = g.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = gs.add_parser("build", parents=[common])
    p.add_argument("facts")
    p.add_argument("-o", "--output", required=True)

    m = sub.add_parser("metrics", parents=[common], help="per-class metrics")
    ms = m.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = ms.add_parser("compute", parents=[common])
    p.add_argument("wsn")
    p.add_argument("facts")
    p.add_argument("-o", "--output", required=True)

    lb = sub.add_parser("labels", parents=[common], help="vulnerability labels")
    ls = lb.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = ls.add_parser("ingest", parents=[common])
    p.add_argument("--advisories", required=True)
    p.add_argument("--bugs", required=True)
    p.add_argument("--diffs", required=True)
    p.add_argument("--facts", required=True)
    p.add_argument("-o", "--output", required=True)

    d = sub.add_parser("dataset", parents=[common], help="labelled dataset")
    ds = d.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = ds.add_parser("build", parents=[common])
    p.add_argument("features")
    p.add_argument("labels")
    p.add_argument("--balance", choices=("under", "none"), default="under")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("train-eval", parents=[common], help="repeated stratified cross-validation")
    p.add_argument("dataset")
    p.add_argument("--model", type=_parse_models, default=("nb",),
                   help="nb, rf or mlp; a comma-separated list runs several")
    p.add_argument("--repeats", type=_positive_int, default=10)
    p.add_argument("--folds", type=_positive_int, default=10)
    p.add_argument("--seed", type=_seed, default=0)
    _add_hyper(p)
    p.add_argument("-o", "--output", required=True)

    s = sub.add_parser("stats", parents=[common], help="statistics")
    ss = s.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = ss.add_parser("wilcoxon", parents=[common])
    p.add_argument("features")
    p.add_argument("labels")
    p.add_argument("-o", "--output", required=True)

    r = sub.add_parser("report", parents=[common], help="reports")
    rs = r.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = rs.add_parser("render", parents=[common])
    p.add_argument("report")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("-o", "--output")

    pl = sub.add_parser("pipeline", parents=[common], help="run every stage from a config file")
    ps = pl.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = ps.add_parser("run", parents=[common])
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--models", type=_parse_models)
    p.add_argument("--repeats", type=_positive_int)
    p.add_argument("--folds", type=_positive_int)
    p.add_argument("--balance", choices=("under", "none"))
    p.add_argument("--ext")
    p.add_argument("--trees", type=_positive_int)
    p.add_argument("--hidden", type=_positive_int)
    p.add_argument("--epochs", type=_positive_int)
    p.add_argument("--lr", type=float)
    return parser


def _dispatch(args):
    cmd = (args.command, getattr(args, "action", None))
    threads = getattr(args, "threads", None) or os.cpu_count() or 1
    if cmd[0] == "extract":
        result = stage_extract(args.root, args.ext, args.output)
        for u in result.unresolved:
            print(f"warning: {u}", file=sys.stderr)
    elif cmd == ("graph", "build"):
        stage_graph(args.facts, args.output)
    elif cmd == ("metrics", "compute"):
        stage_metrics(args.wsn, args.facts, args.output)
    elif cmd == ("labels", "ingest"):
        stage_labels(args.advisories, args.bugs, args.diffs, args.facts, args.output)
    elif cmd == ("dataset", "build"):
        stage_dataset(args.features, args.labels, args.balance, args.seed, args.output)
    elif cmd[0] == "train-eval":
        hyper = {"trees": args.trees, "hidden": args.hidden, "epochs": args.epochs, "lr": args.lr}
        stage_train_eval(args.dataset, args.model, args.repeats, args.folds, args.seed, hyper, args.output, threads)
    elif cmd == ("stats", "wilcoxon"):
        stage_wilcoxon(args.features, args.labels, args.output)
    elif cmd == ("report", "render"):
        with open(args.report, encoding="utf-8") as fh:
            text = render_report(json.load(fh), args.format)
        if args.output:
            Path(args.output).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
    elif cmd == ("pipeline", "run"):
        cfg = load_config(args.config)
        overrides = {k: getattr(args, k) for k in (
            "seed", "models", "repeats", "folds", "balance", "ext", "trees", "hidden", "epochs", "lr",
        ) if getattr(args, k) is not None}
        if args.out:
            overrides["out"] = Path(args.out)
        run_pipeline(replace(cfg, **overrides), threads)
    return EXIT_OK


def _stage_name(args):
    if args is None:
        return "cli"
    return " ".join(x for x in (args.command, getattr(args, "action", None)) if x)


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = None
    try:
        args = build_parser().parse_args(argv)
        return _dispatch(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        where = f" {exc.filename}" if getattr(exc, "filename", None) else ""
        stage = getattr(exc, "stage", _stage_name(args))
        print(f"error [{stage}]: {exc.strerror or exc}:{where}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, RuntimeError) as exc:
        stage = getattr(exc, "stage", _stage_name(args))
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
