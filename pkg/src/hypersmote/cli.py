"""Command-line entry point: ``hypersmote {ingest,augment,train,eval,repro}``.

Every subcommand prints line-delimited JSON records on stdout (or into
``--report``) and human-readable tables on stderr. Exit status is 0 on
success and 2 on any user-facing failure, with a one-line diagnostic.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import zlib
from pathlib import Path

import numpy as np

from . import artifacts, pipeline
from .evalmetrics import aggregate, evaluate
from .hgconv import Split, predict
from .ingest import PROTOCOLS, citation_bundle, load_citation, parse_synth_spec, synth_imbalanced
from .oversample import CountPolicy
from .pipeline import RunConfig

log = logging.getLogger("hypersmote")

# Reference accuracy (and Macro-F1 where known) on Cora, shown beside the
# measured means by ``repro``.
REFERENCE = {
    "I": {"baseline": (0.771, 0.759), "hypersmote": (0.793, 0.784)},
    "III": {"fixed(1)": (0.771, None), "fixed(3)": (0.789, None), "adaptive": (0.793, None)},
    "IV": {"random": (0.757, None), "closest_node": (0.791, None), "closest_hyperedge": (0.793, None), "decoder": (None, None)},
}


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# output


class Reporter:
    def __init__(self, path: str | None):
        self._fh = open(path, "w", encoding="utf-8") if path else sys.stdout

    def emit(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not sys.stdout:
            self._fh.close()


def _table(rows: list[tuple], header: tuple) -> str:
    cells = [tuple(str(c) for c in header)] + [tuple(str(c) for c in r) for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _mean_std(pair: tuple[float, float]) -> str:
    return f"{pair[0]:.3f} ± {pair[1]:.3f}"


# ---------------------------------------------------------------------------
# argument helpers


def _seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _protocol(text: str) -> tuple[int, int, int]:
    if text.lower() in PROTOCOLS:
        return PROTOCOLS[text.lower()]
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        parts = ()
    if len(parts) != 3 or min(parts) < 0:
        raise argparse.ArgumentTypeError(f"protocol must be a dataset name or 'train,val,test', got {text!r}")
    return parts


def _count(text: str) -> str:
    try:
        CountPolicy.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("classifier")
    g.add_argument("--hidden", type=int, default=64, help="hidden width (default 64)")
    g.add_argument("--depth", type=int, default=2, help="convolution layers (default 2)")
    g.add_argument("--epochs", type=int, default=200)
    g.add_argument("--lr", type=float, default=0.01)
    g.add_argument("--weight-decay", type=float, default=5e-4)
    g.add_argument("--dropout", type=float, default=0.5)


def _add_augment_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("augmentation")
    g.add_argument("--tau", type=float, default=0.3, help="weight on the target node (default 0.3)")
    g.add_argument("--count", type=_count, default="adaptive", help="'adaptive' or a fixed integer")
    g.add_argument("--variant", default="decoder",
                   help="decoder | random | closest_node | closest_hyperedge")
    g.add_argument("--num-minority", type=int, default=3)
    g.add_argument("--no-jitter", action="store_true", help="keep repeated synthetic nodes identical")
    g.add_argument("--decoder-hidden", type=int, default=None)
    g.add_argument("--decoder-epochs", type=int, default=None)
    g.add_argument("--decoder-lr", type=float, default=None)
    g.add_argument("--negative-ratio", type=float, default=None,
                   help="sample this many zero entries per incidence one (default: full matrix)")


def _config(args, **over) -> RunConfig:
    kw = {}
    for flag, field in [
        ("hidden", "hidden_dim"), ("depth", "depth"), ("epochs", "epochs"), ("lr", "lr"),
        ("weight_decay", "weight_decay"), ("dropout", "dropout"), ("tau", "tau"), ("count", "count"),
        ("variant", "variant"), ("num_minority", "num_minority"), ("decoder_hidden", "decoder_hidden"),
        ("decoder_epochs", "decoder_epochs"), ("decoder_lr", "decoder_lr"), ("negative_ratio", "negative_ratio"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            kw[field] = value
    if getattr(args, "no_jitter", False):
        kw["jitter"] = False
    if getattr(args, "seeds", None):
        kw["seeds"] = args.seeds
    kw.update(over)
    try:
        return RunConfig(**kw)
    except ValueError as exc:
        raise CliError(f"invalid configuration: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args, out: Reporter) -> None:
    if args.synth:
        opts = parse_synth_spec(args.synth)
        opts.setdefault("seed", args.seed)
        bundle = synth_imbalanced(**opts)
    else:
        if not args.content:
            raise CliError("ingest needs --content (with --cites or --hyperedges) or --synth")
        data = load_citation(args.content, args.cites, rule=args.rule, hyperedges=args.hyperedges)
        name = args.name or Path(args.content).stem
        protocol = args.protocol or PROTOCOLS.get(name.lower(), PROTOCOLS["cora"])
        bundle = citation_bundle(data, protocol, args.seed, name)
    artifacts.save_bundle(args.out, bundle)
    g = bundle.hypergraph
    out.emit({
        "event": "ingest",
        "out": str(args.out),
        "dataset": bundle.meta.get("dataset"),
        "nodes": g.num_nodes,
        "hyperedges": g.num_hyperedges,
        "features": int(bundle.features.shape[1]),
        "classes": bundle.num_classes,
        "split": list(bundle.split.sizes()),
        "train_counts": bundle.train_counts().tolist(),
        "skipped_citations": bundle.meta.get("skipped_citations", 0),
    })


def cmd_augment(args, out: Reporter) -> None:
    bundle = artifacts.load_bundle(args.input)
    cfg = _config(args)
    plan, expanded, fit = pipeline.augment(bundle, cfg, args.seed)
    if args.plan_out:
        artifacts.save_plan(args.plan_out, plan)
    meta = {**bundle.meta, "seed": args.seed, "variant": plan.meta["variant"], "augmentation": cfg.describe()}
    artifacts.save_expanded(args.out, expanded, bundle.class_names, meta)
    hist = plan.label_histogram(bundle.num_classes)
    out.emit({
        "event": "augment",
        "out": str(args.out),
        "plan": str(args.plan_out) if args.plan_out else None,
        "seed": args.seed,
        "variant": plan.meta["variant"],
        "minority": plan.meta["minority"],
        "synthetic_per_class": {str(c): int(n) for c, n in enumerate(hist) if n},
        "synthetic_nodes": len(plan),
        "decoder_loss": fit.final_loss,
    })


def _load_for_training(path) -> tuple[pipeline.DatasetBundle, str]:
    kind, _, _ = artifacts.read_container(path)
    return artifacts.load_trainable(path), kind


def _sweep(text: str | None) -> tuple[str | None, list[str]]:
    if not text:
        return None, []
    key, _, values = text.partition("=")
    key = key.strip().replace("-", "_")
    if key not in ("variant", "count", "tau") or not values:
        raise CliError(f"--sweep expects variant=..., count=... or tau=..., got {text!r}")
    return key, [v.strip() for v in values.split(",") if v.strip()]


def _run_grid(bundle, rows: list[tuple[str, RunConfig]], seeds, resplit: bool, out: Reporter, label: str):
    """Run every (row, seed), sharing one decoder fit per seed across rows."""
    reports: dict[str, list] = {name: [] for name, _ in rows}
    for seed in seeds:
        b = pipeline.resplit(bundle, seed) if resplit else bundle
        fits: dict[tuple, object] = {}
        for name, cfg in rows:
            fit = None
            if cfg.augment:
                key = (cfg.decoder_hidden, cfg.decoder_epochs, cfg.decoder_lr, cfg.negative_ratio)
                if key not in fits:
                    fits[key] = pipeline.pretrain_decoder(b, cfg, seed)
                fit = fits[key]
            outcome = pipeline.run(b, cfg, seed, fit)
            reports[name].append(outcome.report)
            rec = outcome.report.to_record()
            rec.update({"event": label, "row": name, "best_epoch": outcome.best_epoch})
            out.emit(rec)
            log.info("%s seed %d: acc %.3f macro-F1 %.3f", name, seed, outcome.report.accuracy, outcome.report.macro_f1)
    return {name: aggregate(reps) for name, reps in reports.items()}


def cmd_train(args, out: Reporter) -> None:
    bundle, kind = _load_for_training(args.input)
    key, values = _sweep(args.sweep)
    if key is None:
        cfg = _config(args, augment=False)
        input_crc = zlib.crc32(Path(args.input).read_bytes())
        reports = []
        for seed in cfg.seeds:
            outcome = pipeline.train_eval(bundle.hypergraph, bundle.features, bundle.labels, bundle.split,
                                          bundle.num_classes, cfg, seed,
                                          config_tag={**cfg.describe(), "input": kind})
            if args.checkpoint:
                path = str(args.checkpoint).format(seed=seed)
                # a content checksum rather than the path keeps checkpoints location independent
                artifacts.save_checkpoint(path, outcome.model, {"seed": seed, "input_crc32": input_crc})
            rec = outcome.report.to_record()
            rec.update({"event": "train", "input": kind, "best_epoch": outcome.best_epoch})
            out.emit(rec)
            reports.append(outcome.report)
        agg = aggregate(reports)
        print(_table([(kind, _mean_std(agg["accuracy"]), _mean_std(agg["macro_f1"]))],
                     ("input", "accuracy", "macro-F1")), file=sys.stderr)
        return
    if kind != "bundle":
        raise CliError("--sweep runs augmentation itself and needs an un-augmented bundle")
    base = _config(args)
    rows = [(f"{key}={v}", base.with_(**{key: float(v) if key == "tau" else v})) for v in values]
    for _, cfg in rows:
        cfg.validate()
    if args.with_baseline:
        rows.insert(0, ("baseline", base.with_(augment=False)))
    agg = _run_grid(bundle, rows, base.seeds, args.resplit, out, "train")
    print(_table([(n, _mean_std(a["accuracy"]), _mean_std(a["macro_f1"])) for n, a in agg.items()],
                 ("row", "accuracy", "macro-F1")), file=sys.stderr)


def cmd_eval(args, out: Reporter) -> None:
    bundle, kind = _load_for_training(args.input)
    model, meta = artifacts.load_checkpoint(args.checkpoint)
    if model.layers[0].w1.d_in != bundle.features.shape[1]:
        raise CliError(f"checkpoint expects {model.layers[0].w1.d_in} features, bundle has {bundle.features.shape[1]}")
    idx = getattr(bundle.split, args.split)
    if idx.size == 0:
        raise CliError(f"split {args.split!r} is empty")
    pred = predict(model, bundle.hypergraph, bundle.features)
    report = evaluate(pred[idx], bundle.labels[idx], bundle.num_classes, seed=int(meta.get("seed", 0)),
                      split=args.split, config={"checkpoint": str(args.checkpoint), "input": kind})
    rec = report.to_record()
    rec["event"] = "eval"
    out.emit(rec)


def _repro_rows(table: str, base: RunConfig) -> list[tuple[str, RunConfig]]:
    if table == "I":
        return [("baseline", base.with_(augment=False)), ("hypersmote", base)]
    if table == "III":
        return [("fixed(1)", base.with_(count="1")), ("fixed(3)", base.with_(count="3")), ("adaptive", base)]
    return [(v, base.with_(variant=v)) for v in ("random", "closest_node", "closest_hyperedge", "decoder")]


def _dataset_bundle(args) -> pipeline.DatasetBundle:
    if args.input:
        return artifacts.load_bundle(args.input)
    if args.dataset == "synth":
        return synth_imbalanced(**parse_synth_spec(args.synth))
    root = Path(args.data_dir) / args.dataset
    data = load_citation(root / f"{args.dataset}.content", root / f"{args.dataset}.cites")
    return citation_bundle(data, PROTOCOLS[args.dataset], 0, args.dataset)


def cmd_repro(args, out: Reporter) -> None:
    bundle = _dataset_bundle(args)
    base = _config(args)
    table = args.table.upper()
    rows = _repro_rows(table, base)
    agg = _run_grid(bundle, rows, base.seeds, resplit=True, out=out, label=f"repro-{table}")
    ref = REFERENCE[table] if bundle.meta.get("dataset") == "cora" else {}
    lines = []
    for name, a in agg.items():
        r_acc, r_f1 = ref.get(name, (None, None))
        lines.append((name, _mean_std(a["accuracy"]), _mean_std(a["macro_f1"]),
                      "-" if r_acc is None else f"{r_acc:.3f}", "-" if r_f1 is None else f"{r_f1:.3f}"))
        out.emit({"event": f"repro-{table}-summary", "row": name, "accuracy": a["accuracy"],
                  "macro_f1": a["macro_f1"], "reference_accuracy": r_acc, "reference_macro_f1": r_f1,
                  "seeds": list(base.seeds)})
    print(_table(lines, ("row", "accuracy", "macro-F1", "ref acc", "ref F1")), file=sys.stderr)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypersmote", description="Hypergraph minority oversampling experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug logging on stderr")
    parser.add_argument("--report", help="write JSON records here instead of stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load raw files or generate synthetic data into a bundle artifact")
    p.add_argument("--content")
    p.add_argument("--cites")
    p.add_argument("--rule", default="cocitation", choices=["cocitation", "coauthorship", "coauthorship-proxy"])
    p.add_argument("--hyperedges", help="prebuilt hyperedge list (co-authorship rule)")
    p.add_argument("--synth", help="e.g. classes=2,counts=40:4,homophily=0.9,dim=16")
    p.add_argument("--protocol", type=_protocol, help="cora | citeseer | train,val,test")
    p.add_argument("--name", help="dataset name recorded in the artifact")
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("augment", help="pretrain the decoder, synthesize and attach minority nodes")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="expanded bundle artifact")
    p.add_argument("--plan-out", help="also save the augmentation plan")
    _add_augment_flags(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train and test a classifier on a bundle or expanded bundle")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--seeds", type=_seeds, default=(0,))
    p.add_argument("--checkpoint", help="save the best model; '{seed}' is replaced per seed")
    p.add_argument("--sweep", help="variant=a,b,... | count=... | tau=... (runs augmentation per value)")
    p.add_argument("--with-baseline", action="store_true", help="add an un-augmented row to a sweep")
    p.add_argument("--resplit", action="store_true", help="draw a fresh split per seed in a sweep")
    _add_model_flags(p)
    _add_augment_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("repro", help="run a preset comparison grid over seeds")
    p.add_argument("--table", required=True, type=str.upper, choices=["I", "III", "IV"],
                   help="I: baseline vs full pipeline; III: count policies; IV: attachment variants")
    p.add_argument("--dataset", default="cora", choices=["cora", "citeseer", "synth"])
    p.add_argument("--data-dir", default="data")
    p.add_argument("--in", dest="input", help="use this bundle artifact instead of raw files")
    p.add_argument("--synth", default="classes=2,counts=40:4,homophily=0.9")
    p.add_argument("--seeds", type=_seeds, default=pipeline.DEFAULT_SEEDS)
    _add_model_flags(p)
    _add_augment_flags(p)
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    out = Reporter(args.report)
    try:
        args.func(args, out)
    except (CliError, ValueError, FileNotFoundError, OSError) as exc:
        print(f"hypersmote {args.command}: error: {exc}", file=sys.stderr)
        return 2
    finally:
        out.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
