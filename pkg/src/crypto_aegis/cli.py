"""Command-line entry point: ``crypto-aegis <command> ...``.

Exit codes: 0 success, 1 alert raised by ``detect --alert-threshold``,
2 usage or data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .dataset import InsufficientRowsError
from .features import FEATURE_NAMES, WindowConfig, featurize, format_feature_csv
from .forest import ModelFormatError, model_from_json, model_to_json
from .metrics import ConfusionMatrix, EvalReport, RocCurve, match_published
from .pipeline import (
    LabeledInput,
    RunConfig,
    atomic_write,
    detect_with_model,
    load_flows,
    load_packets,
    run_cv,
    run_detect,
    train_flow_model,
)
from .synth import SynthConfig, build_corpus, builtin_profiles, load_profiles
from .trace import (
    Direction,
    InsufficientPacketsError,
    TraceFormatError,
    TraceLabel,
    format_canonical_csv,
    split_directions,
    summarize,
)

log = logging.getLogger("crypto_aegis")

SEED_ENV = "CRYPTO_AEGIS_SEED"
EXIT_OK, EXIT_ALERT, EXIT_ERROR = 0, 1, 2


class UsageError(Exception):
    pass


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _per_class_rows(value: str):
    if value in ("min", "all"):
        return value
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError("expected an integer, 'min' or 'all'") from None
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _window_range(value: str) -> list[int]:
    lo, sep, hi = value.partition(":")
    try:
        ws = list(range(int(lo), int(hi) + 1)) if sep else [int(lo)]
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO:HI, e.g. 2:12") from None
    if not ws or ws[0] < 1:
        raise argparse.ArgumentTypeError("window lengths must be >= 1")
    return ws


def _positive(value: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in value.split(",") if p.strip())


def _run_config(args) -> RunConfig:
    return RunConfig(window_w=args.window, n_trees=args.trees, k_folds=args.folds,
                     seed=_resolve_seed(args), per_class_rows=args.per_class_rows,
                     positive_classes=tuple(args.positive or ()), m_try=args.m_try)


def _inputs(specs) -> list[LabeledInput]:
    try:
        return [LabeledInput.parse(s) for s in specs]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _tsv(rows) -> str:
    return "\n".join("\t".join(str(c) for c in row) for row in rows) + "\n"


def _fmt(x) -> str:
    return "nan" if x is None else f"{x:.4f}"


def _save_fig(args, fig, name: str):
    if not args.no_figures:
        plotting.save(fig, Path(args.out_dir) / name, atomic_write)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    src = Path(args.input)
    packets = load_packets(src, args.local_subnet)
    name = args.name or src.stem
    out_dir = Path(args.out_dir)
    ingoing, outgoing = split_directions(packets, TraceLabel(name))
    for trace, suffix in ((ingoing, "in"), (outgoing, "out")):
        atomic_write(out_dir / f"{name}.{suffix}.csv", format_canonical_csv(trace.packets))
    print(_tsv([("file", "direction", "packets"),
                (f"{name}.in.csv", "in", len(ingoing)),
                (f"{name}.out.csv", "out", len(outgoing))]), end="")
    return EXIT_OK


def cmd_summarize(args) -> int:
    flows = load_flows(_inputs(args.traces), args.local_subnet)
    rows = [("label", "direction", "packets", "duration_s", "q05_dt", "q50_dt", "q95_dt",
             "q05_sz", "q50_sz", "q95_sz")]
    by_flow = {}
    for direction, traces in flows.items():
        for t in traces:
            if len(t) < 2:
                continue
            s = summarize(t)
            by_flow.setdefault(direction, {})[t.label.application] = s
            rows.append((t.label.application, direction.value, s.n_packets,
                         f"{s.duration:.6f}", f"{s.q05_dt:.6g}", f"{s.q50_dt:.6g}",
                         f"{s.q95_dt:.6g}", f"{s.q05_sz:g}", f"{s.q50_sz:g}", f"{s.q95_sz:g}"))
    text = _tsv(rows)
    print(text, end="")
    if args.out_dir:
        atomic_write(Path(args.out_dir) / "summary.tsv", text)
        for direction, summaries in by_flow.items():
            d = direction.value
            _save_fig(args, plotting.quantile_figure(summaries, "sz", title=f"packet size ({d})"),
                      f"quantiles_sz_{d}.png")
            _save_fig(args, plotting.quantile_figure(summaries, "dt", log_scale=True,
                                                     title=f"interarrival ({d})"),
                      f"quantiles_dt_{d}.png")
    return EXIT_OK


def cmd_featurize(args) -> int:
    flows = load_flows(_inputs(args.traces), args.local_subnet)
    direction = Direction(args.direction)
    mats = [featurize(t, WindowConfig(args.window)) for t in flows[direction] if len(t) >= 2]
    text = format_feature_csv(mats)
    if args.output:
        atomic_write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _load_profile_source(source: str):
    path = Path(source)
    if path.exists():
        return load_profiles(path)
    # fall back to the copies shipped inside the package
    return builtin_profiles(path.stem)


def cmd_synth(args) -> int:
    if args.n < 2:
        raise UsageError("-n must be >= 2 (a trace needs at least 2 packets)")
    try:
        profiles = _load_profile_source(args.profiles)
    except FileNotFoundError:
        raise UsageError(f"profile file not found: {args.profiles}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid profile file: {exc}") from None
    traces = build_corpus(SynthConfig(args.n, _resolve_seed(args), tuple(profiles)))
    out_dir = Path(args.out_dir)
    rows = [("file", "label", "direction", "packets")]
    for p, trace in zip(profiles, traces):
        fname = f"{_slug(p.name)}.csv"
        atomic_write(out_dir / fname, format_canonical_csv(trace.packets))
        rows.append((fname, p.name, p.direction.value, len(trace)))
    print(_tsv(rows), end="")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    direction = Direction(args.direction)
    flows = load_flows(_inputs(args.traces), args.local_subnet)
    model = train_flow_model(flows[direction], cfg, direction)
    atomic_write(Path(args.model), model_to_json(model))
    print(_tsv([("model", "direction", "classes", "trees"),
                (args.model, direction.value, ",".join(model.class_names), len(model.trees))]),
          end="")
    return EXIT_OK


def _read_model(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise ModelFormatError("model file is not UTF-8 text") from None
    return model_from_json(text)


def cmd_inspect(args) -> int:
    model = _read_model(args.model)
    nodes = [t.n_nodes for t in model.trees]
    print(_tsv([("classes", "trees", "m_try", "seed", "direction", "window", "nodes_total"),
                (",".join(model.class_names), len(model.trees), model.config.m_try,
                 model.config.seed, model.meta.get("direction"), model.meta.get("window"),
                 sum(nodes))]), end="")
    return EXIT_OK


def cmd_cv(args) -> int:
    cfg = _run_config(args)
    inputs = _inputs(args.traces)
    report, results = run_cv(inputs, cfg, args.local_subnet, args.window_sweep or ())
    out_dir = Path(args.out_dir)
    atomic_write(out_dir / "cv_report.json", _dump_json(report))

    rows = [("flow", "class", "tpr", "fpr", "precision", "f1", "auc")]
    for flow, fr in report["flows"].items():
        table = [("class", "tpr", "fpr", "precision", "f1", "auc")]
        for name, r in fr["per_class"].items():
            cells = (_fmt(r["tpr"]), _fmt(r["fpr"]), _fmt(r["precision"]), _fmt(r["f1"]),
                     _fmt(r["auc"]))
            rows.append((flow, name) + cells)
            table.append((name,) + cells)
        atomic_write(out_dir / f"per_class_{flow}.tsv", _tsv(table))
        _save_fig(args, plotting.rates_figure(fr["per_class"], f"one-vs-rest, {flow}"),
                  f"per_class_{flow}.png")
        if fr["binary"] is not None:
            b = fr["binary"]
            rows.append((flow, "Crypto(binary)", _fmt(b["tpr"]), _fmt(b["fpr"]),
                         _fmt(b["precision"]), _fmt(b["f1"]), _fmt(b["auc"])))
            _write_roc(args, out_dir, flow, b)
        if "importance_sweep" in fr:
            sweep = fr["importance_sweep"]
            imp = [("w",) + FEATURE_NAMES]
            for w, feats in sweep.items():
                imp.append((w,) + tuple(f"{feats[f]['score']:.4f}" for f in FEATURE_NAMES))
            atomic_write(out_dir / f"importance_{flow}.tsv", _tsv(imp))
            print(f"# importance score by window ({flow})")
            print(_tsv(imp), end="")
            _save_fig(args, plotting.importance_figure(sweep, f"importance vs w, {flow}"),
                      f"importance_{flow}.png")
    print(_tsv(rows), end="")
    for flow, fr in report["flows"].items():
        print(f"# {flow}: auc={_fmt(fr['auc'])} folds={report['folds']} rows={fr['n_rows']}")
    return EXIT_OK


def _write_roc(args, out_dir: Path, flow: str, binary: dict):
    roc = binary["roc"]
    curve = RocCurve(np.array(roc["fpr"]), np.array(roc["tpr"]), np.array(roc["thresholds"]))
    atomic_write(out_dir / f"roc_{flow}.csv", curve.to_csv())
    _save_fig(args, plotting.roc_figure({f"Crypto, {flow}": (curve, binary["auc"])},
                                        f"ROC, {flow}"), f"roc_{flow}.png")


def _parse_confusion(tokens) -> ConfusionMatrix:
    counts = {}
    for tok in re.split(r"[\s,]+", " ".join(tokens).strip()):
        key, sep, val = tok.partition("=")
        if not sep or key.lower() not in ("tp", "tn", "fp", "fn"):
            raise UsageError(f"bad confusion entry {tok!r}; expected tn=.. fp=.. fn=.. tp=..")
        try:
            counts[key.lower()] = int(val)
        except ValueError:
            raise UsageError(f"bad count in {tok!r}") from None
    missing = {"tp", "tn", "fp", "fn"} - set(counts)
    if missing:
        raise UsageError(f"missing counts: {', '.join(sorted(missing))}")
    if any(v < 0 for v in counts.values()):
        raise UsageError("counts must be non-negative")
    return ConfusionMatrix.from_counts(counts["tp"], counts["tn"], counts["fp"], counts["fn"],
                                       positive="Crypto", negative="Standard")


def cmd_detect(args) -> int:
    out_dir = Path(args.out_dir)
    if args.from_confusion:
        cm = _parse_confusion(args.from_confusion)
        rep = EvalReport.build(cm)
        doc = {"kind": "confusion", "version": 1, "report": rep.as_dict(), "published": None}
        r = rep.rates
        print(_tsv([("tp", "tn", "fp", "fn", "tpr", "fpr", "precision", "recall", "f1"),
                    (cm.tp, cm.tn, cm.fp, cm.fn, _fmt(r.tpr), _fmt(r.fpr), _fmt(r.precision),
                     _fmt(r.recall), _fmt(r.f1))]), end="")
        known = match_published(cm)
        if known:
            name, stated = known
            doc["published"] = {"table": name, "stated": stated}
            note = ", ".join(f"{k}={v}" for k, v in stated.items())
            print(f"# note: these counts match the published '{name}' table, "
                  f"whose stated values are {note}; the values above are recomputed from the counts")
        if args.out_dir:
            atomic_write(out_dir / "detect_report.json", _dump_json(doc))
        return EXIT_OK

    if args.model:
        if not args.target:
            raise UsageError("--model needs --target")
        model = _read_model(args.model)
        report = detect_with_model(model, Path(args.target), args.positive or (),
                                   args.local_subnet)
    else:
        if not args.traces:
            raise UsageError("give --trace LABEL=PATH inputs, --model, or --from-confusion")
        if not args.positive:
            raise UsageError("--positive is required when training")
        report = run_detect(_inputs(args.traces), _run_config(args),
                            Path(args.target) if args.target else None, args.local_subnet)

    atomic_write(out_dir / "detect_report.json", _dump_json(report))
    rows = [("flow", "tp", "tn", "fp", "fn", "precision", "recall", "f1", "auc",
             "target_rows", "alert_fraction")]
    alert = False
    for flow, fr in report["flows"].items():
        c = fr.get("confusion")
        tgt = fr.get("target") or {}
        frac = tgt.get("alert_fraction")
        if args.alert_threshold is not None and frac is not None and frac >= args.alert_threshold:
            alert = True
        rows.append((flow,
                     *(("-",) * 4 if c is None else (c["tp"], c["tn"], c["fp"], c["fn"])),
                     *(_fmt(fr.get(k)) if k in fr else "-" for k in
                       ("precision", "recall", "f1", "auc")),
                     tgt.get("rows", "-"), "-" if frac is None else f"{frac:.4f}"))
        if c is not None and fr.get("roc"):
            _write_roc(args, out_dir, flow, fr)
    print(_tsv(rows), end="")
    if alert:
        print(f"# ALERT: alert fraction >= {args.alert_threshold}")
        return EXIT_ALERT
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def _add_common(p, training=True):
    p.add_argument("--local-subnet", help="CIDR of the monitored network (pcap input)")
    p.add_argument("--seed", type=int, default=None,
                   help=f"top-level seed (default: ${SEED_ENV}, else 0)")
    if training:
        p.add_argument("--window", type=int, default=5, help="moving window length w")
        p.add_argument("--trees", type=int, default=20)
        p.add_argument("--folds", type=int, default=10)
        p.add_argument("--m-try", type=int, default=None,
                       help="features tried per split (default ceil(sqrt(6)) = 3)")
        p.add_argument("--per-class-rows", type=_per_class_rows, default="min",
                       help="rows per class: N, 'min' (balance to smallest) or 'all'")
        p.add_argument("--positive", type=_positive, default=None,
                       help="comma-separated classes treated as Crypto")


def _add_output(p, default="."):
    p.add_argument("--out-dir", default=default)
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crypto-aegis",
                                 description="Detect cryptocurrency clients in traffic metadata.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert pcap/CSV into per-direction canonical CSVs")
    p.add_argument("input")
    p.add_argument("--name", help="output basename (default: input stem)")
    _add_common(p, training=False)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("summarize", help="duration and quantiles per trace and direction")
    p.add_argument("traces", nargs="+", metavar="LABEL=PATH")
    _add_common(p, training=False)
    _add_output(p, default=None)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("featurize", help="write the per-packet feature CSV")
    p.add_argument("traces", nargs="+", metavar="LABEL=PATH")
    p.add_argument("--direction", choices=["in", "out"], default="in")
    p.add_argument("--window", type=int, default=5)
    p.add_argument("-o", "--output")
    _add_common(p, training=False)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("synth", help="generate synthetic traces from a profile file")
    p.add_argument("profiles")
    p.add_argument("-n", type=int, default=4576, help="packets per trace")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train and save a model for one direction")
    p.add_argument("traces", nargs="+", metavar="LABEL=PATH")
    p.add_argument("--direction", choices=["in", "out"], default="in")
    p.add_argument("--model", required=True, help="output model JSON")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("inspect", help="load a model file and print a summary")
    p.add_argument("model")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("cv", help="k-fold cross-validation, per direction")
    p.add_argument("traces", nargs="+", metavar="LABEL=PATH")
    p.add_argument("--window-sweep", type=_window_range, default=None,
                   help="importance per window length, e.g. 2:12")
    _add_common(p)
    _add_output(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("detect", help="Crypto-vs-Standard detection")
    p.add_argument("--trace", dest="traces", action="append", metavar="LABEL=PATH")
    p.add_argument("--target", help="trace to screen")
    p.add_argument("--model", help="saved model to screen --target with")
    p.add_argument("--from-confusion", nargs="+", metavar="K=V",
                   help="report rates for given counts, e.g. tn=1 fp=2 fn=3 tp=4")
    p.add_argument("--alert-threshold", type=float, default=None,
                   help="exit 1 when the target's alert fraction reaches this value")
    _add_common(p)
    _add_output(p)
    p.set_defaults(func=cmd_detect)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, TraceFormatError, InsufficientPacketsError, InsufficientRowsError,
            ModelFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
