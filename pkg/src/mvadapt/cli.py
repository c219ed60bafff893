"""Command-line experiment harness.

Subcommands: synth, baseline, train, eval, sweep, bound, report. Every run
writes its flat-key configuration (plus a stable 64-bit hash) beside its
outputs. Exit codes: 0 success, 1 validation failure, 2 I/O failure; error
details go to stderr as one JSON line.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .adapter import AdapterConfig
from .checkpoint import load_params, save_params
from .config import config_hash, load_lexicon, read_run_config, write_run_config
from .pipeline import evaluate_head, evaluate_zero_shot
from .retrieval import render_report
from .store import (
    DatasetError,
    DatasetValidationError,
    SyntheticSpec,
    dataset_content_hash,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
)
from .synthesis import SynthesisUnavailableError, bound_report
from .training import SynthConfig, TrainConfig, fit

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _fail(code, kind, message):
    print(json.dumps({"error": kind, "message": str(message)}), file=sys.stderr)
    return code


def _add_common(p):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=42)


def _add_train_flags(p):
    p.add_argument("--config", help="JSON config file with flat keys")
    p.add_argument("--lambda", dest="fusion_weight", type=float, default=None)
    p.add_argument("--chunk-size", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--blocks", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--no-vfs", action="store_true")
    p.add_argument("--shots", type=int, default=None,
                   help="cap train instances per class")
    p.add_argument("--concepts", type=int, default=None,
                   help="working unseen-concept count E")
    p.add_argument("--selection", choices=["random_e", "top_e"], default=None)
    p.add_argument("--lexicon", help="override lexicon file (one name per line)")
    p.add_argument("--head", choices=["chunk", "mlp"], default="chunk")


def build_parser():
    ap = argparse.ArgumentParser(prog="mvadapt")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", default="default",
                   help="'default' or a JSON file of SyntheticSpec fields")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("baseline", help="zero-shot mean-pool evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--metric-variant", default="anmrr=gtm")
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)

    p = sub.add_parser("train", help="fit the adapter (and synthesizer)")
    p.add_argument("--data", required=True)
    _add_train_flags(p)
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate saved parameters")
    p.add_argument("--params", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--data-eval", help="evaluate on this dataset instead "
                                       "(cross-dataset protocol)")
    p.add_argument("--metric-variant", default="anmrr=gtm")
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)

    p = sub.add_parser("sweep", help="grid over one axis, CSV output")
    p.add_argument("--data", required=True)
    p.add_argument("--axis", required=True,
                   choices=["lambda", "chunk_size", "stride", "concepts", "shots"])
    p.add_argument("--values", required=True, help="comma-separated grid values")
    p.add_argument("--seeds", default=None, help="comma-separated seeds")
    p.add_argument("--plot", action="store_true")
    _add_train_flags(p)
    _add_common(p)

    p = sub.add_parser("bound", help="synthesis deviation diagnostics")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--pairs", type=int, default=10000)
    p.add_argument("--slack", type=float, default=2.0)
    _add_common(p)

    p = sub.add_parser("report", help="merge run outputs into one summary")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    return ap


def _anmrr_variant(text):
    if text not in ("anmrr=gtm", "anmrr=2ng"):
        raise ValueError(f"unknown metric variant {text!r}")
    return text.split("=")[1]


def _load_file_config(path):
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _configs_from_args(args, dataset):
    """Merge defaults < config file < explicit flags into run settings."""
    file_cfg = _load_file_config(getattr(args, "config", None))
    adapter = AdapterConfig(dino_dim=dataset.manifest.dino_dim)
    train = TrainConfig(seed=args.seed)
    synth = SynthConfig()
    adapter_fields = set(asdict(adapter))
    train_fields = set(asdict(train))
    synth_fields = set(asdict(synth))
    for key, val in file_cfg.items():
        if key in adapter_fields:
            adapter = replace(adapter, **{key: val})
        elif key in train_fields:
            if key == "milestones":
                val = (tuple(int(x) for x in val.split(","))
                       if isinstance(val, str) else tuple(val))
            train = replace(train, **{key: val})
        elif key in synth_fields:
            synth = replace(synth, **{key: val})
        else:
            raise ValueError(f"unknown config key {key!r}")
    if args.fusion_weight is not None:
        adapter = replace(adapter, fusion_weight=args.fusion_weight)
    if args.chunk_size is not None:
        adapter = replace(adapter, chunk_size=args.chunk_size, conv_stride=0)
    if args.stride is not None:
        adapter = replace(adapter, conv_stride=args.stride)
    if args.blocks is not None:
        adapter = replace(adapter, num_blocks=args.blocks)
    if args.epochs is not None:
        train = replace(train, epochs=args.epochs)
    if args.no_vfs:
        train = replace(train, synth_enabled=False)
    if args.shots is not None:
        train = replace(train, few_shot_limit=args.shots)
    if args.concepts is not None:
        synth = replace(synth, num_concepts=args.concepts)
    if args.selection is not None:
        synth = replace(synth, selection_mode=args.selection)
    train = replace(train, seed=args.seed)
    return adapter, train, synth


def _flat_config(args, adapter, train, synth, data_path):
    flat = {"command": args.command, "data": str(data_path),
            "dataset_hash": str(dataset_content_hash(data_path)),
            "head": getattr(args, "head", "chunk")}
    flat.update(asdict(adapter))
    doc = asdict(train)
    doc["milestones"] = ",".join(str(m) for m in doc["milestones"])
    flat.update(doc)
    flat.update(asdict(synth))
    return flat


def _apply_lexicon(dataset, path):
    if path:
        dataset.manifest.lexicon_names = load_lexicon(path)


def cmd_synth(args):
    if args.spec == "default":
        spec = SyntheticSpec(data_seed=args.seed)
    else:
        spec = SyntheticSpec(**json.loads(Path(args.spec).read_text(encoding="utf-8")))
        spec = replace(spec, data_seed=args.seed)
    dataset = generate_synthetic_dataset(spec)
    save_dataset(dataset, args.out)
    doc = asdict(spec)
    doc["command"] = "synth"
    write_run_config(doc, args.out)
    print(f"wrote {dataset.manifest.num_objects} objects to {args.out}")
    return EXIT_OK


def cmd_baseline(args):
    dataset = load_dataset(args.data)
    variant = _anmrr_variant(args.metric_variant)
    flat = {"command": "baseline", "data": str(args.data),
            "dataset_hash": str(dataset_content_hash(args.data)),
            "metric_variant": args.metric_variant, "seed": args.seed}
    h = write_run_config(flat, args.out)
    report = evaluate_zero_shot(dataset, variant=variant, workers=args.workers,
                                config_hash=h, seed=args.seed)
    out = Path(args.out)
    (out / "metrics.json").write_text(render_report(report), encoding="utf-8")
    print(f"mAP={report.map:.4f} NDCG={report.ndcg:.4f} ANMRR={report.anmrr:.4f}")
    return EXIT_OK


def cmd_train(args):
    dataset = load_dataset(args.data)
    _apply_lexicon(dataset, args.lexicon)
    adapter, train, synth = _configs_from_args(args, dataset)
    flat = _flat_config(args, adapter, train, synth, args.data)
    h = write_run_config(flat, args.out)
    result = fit(dataset, adapter, train, synth, head=args.head)
    out = Path(args.out)
    save_params(result, adapter, out)
    with (out / "train_log.jsonl").open("w", encoding="utf-8") as fh:
        for rec in result.log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    report = evaluate_head(dataset, result.head, adapter, result.head_params,
                           config_hash=h, seed=train.seed)
    (out / "metrics.json").write_text(render_report(report), encoding="utf-8")
    print(f"trained {train.epochs} epochs; "
          f"mAP={report.map:.4f} NDCG={report.ndcg:.4f} ANMRR={report.anmrr:.4f}")
    return EXIT_OK


def cmd_eval(args):
    head, adapter, head_params, _ = load_params(args.params)
    data_path = args.data_eval or args.data
    dataset = load_dataset(data_path)
    variant = _anmrr_variant(args.metric_variant)
    flat = {"command": "eval", "data": str(data_path),
            "dataset_hash": str(dataset_content_hash(data_path)),
            "params": str(args.params), "metric_variant": args.metric_variant,
            "seed": args.seed, "head": head}
    h = write_run_config(flat, args.out)
    report = evaluate_head(dataset, head, adapter, head_params, variant=variant,
                           workers=args.workers, config_hash=h, seed=args.seed)
    (Path(args.out) / "metrics.json").write_text(render_report(report),
                                                 encoding="utf-8")
    print(f"mAP={report.map:.4f} NDCG={report.ndcg:.4f} ANMRR={report.anmrr:.4f}")
    return EXIT_OK


def _sweep_settings(axis, value, adapter, train, synth):
    if axis == "lambda":
        return replace(adapter, fusion_weight=float(value)), train, synth
    if axis == "chunk_size":
        return replace(adapter, chunk_size=int(value), conv_stride=0), train, synth
    if axis == "stride":
        return replace(adapter, conv_stride=int(value)), train, synth
    if axis == "concepts":
        return adapter, train, replace(synth, num_concepts=int(value))
    if axis == "shots":
        return adapter, replace(train, few_shot_limit=int(value)), synth
    raise ValueError(f"unknown sweep axis {axis!r}")


def cmd_sweep(args):
    dataset = load_dataset(args.data)
    _apply_lexicon(dataset, args.lexicon)
    adapter0, train0, synth0 = _configs_from_args(args, dataset)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    seeds = ([int(s) for s in args.seeds.split(",")] if args.seeds
             else [train0.seed])
    flat = _flat_config(args, adapter0, train0, synth0, args.data)
    flat["axis"] = args.axis
    flat["values"] = ",".join(values)
    flat["seeds"] = ",".join(str(s) for s in seeds)
    write_run_config(flat, args.out)

    rows = []
    for value in values:
        for seed in seeds:
            adapter, train, synth = _sweep_settings(
                args.axis, value, adapter0, replace(train0, seed=seed), synth0)
            result = fit(dataset, adapter, train, synth, head=args.head)
            report = evaluate_head(dataset, result.head, adapter,
                                   result.head_params, seed=seed)
            rows.append({"axis": args.axis, "value": value, "seed": seed,
                         "map": f"{report.map:.6f}",
                         "ndcg": f"{report.ndcg:.6f}",
                         "anmrr": f"{report.anmrr:.6f}"})
            print(f"{args.axis}={value} seed={seed} mAP={report.map:.4f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["axis", "value", "seed",
                                                "map", "ndcg", "anmrr"])
        writer.writeheader()
        writer.writerows(rows)
    if args.plot:
        _maybe_plot(rows, out / "sweep.png", args.axis)
    return EXIT_OK


def _maybe_plot(rows, path, axis):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("warning: matplotlib unavailable, skipping plot", file=sys.stderr)
        return
    xs = [float(r["value"]) for r in rows]
    ys = [float(r["map"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(xs, ys, "o-")
    ax.set_xlabel(axis)
    ax.set_ylabel("mAP")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_bound(args):
    dataset = load_dataset(args.data)
    _, _, _, synth_params = load_params(args.params)
    if synth_params is None:
        raise SynthesisUnavailableError("saved parameters carry no synthesizer")
    flat = {"command": "bound", "data": str(args.data),
            "dataset_hash": str(dataset_content_hash(args.data)),
            "params": str(args.params), "pairs": args.pairs,
            "slack": args.slack, "seed": args.seed}
    write_run_config(flat, args.out)
    rep = bound_report(synth_params, dataset, num_pairs=args.pairs,
                       slack=args.slack, seed=args.seed)
    doc = {
        "lipschitz_estimate": f"{rep.lipschitz_estimate:.6f}",
        "sigma_sq": f"{rep.sigma_sq:.6f}",
        "violation_rate": f"{rep.violation_rate:.6f}",
        "slack": f"{rep.slack:.6f}",
        "expansion_residual": f"{rep.expansion_residual:.3e}",
        "deviations": {name: f"{dev:.6f}" for name, dev in
                       zip(rep.unseen_class_names, rep.deviations)},
    }
    (Path(args.out) / "bound.json").write_text(
        json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(f"L={rep.lipschitz_estimate:.4f} sigma_sq={rep.sigma_sq:.4f} "
          f"violation_rate={rep.violation_rate:.3f}")
    return EXIT_OK


def cmd_report(args):
    merged = []
    dataset_hashes = set()
    for run in args.runs:
        cfg = read_run_config(run)
        if "dataset_hash" in cfg:
            dataset_hashes.add(cfg["dataset_hash"])
        entry = {"run": str(run), "config_hash": cfg.get("config_hash", "")}
        metrics_path = Path(run) / "metrics.json"
        if metrics_path.exists():
            metrics = json.loads(metrics_path.read_text(encoding="utf-8"))
            for key in ("map", "ndcg", "anmrr", "num_queries"):
                entry[key] = metrics.get(key)
        merged.append(entry)
    if len(dataset_hashes) > 1:
        raise ValueError(f"refusing to merge runs over different datasets: "
                         f"{sorted(dataset_hashes)}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"runs": merged}, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    print(f"merged {len(merged)} runs into {out}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "baseline": cmd_baseline,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "bound": cmd_bound,
    "report": cmd_report,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (DatasetValidationError, SynthesisUnavailableError, ValueError) as exc:
        return _fail(EXIT_VALIDATION, "validation", exc)
    except DatasetError as exc:
        return _fail(EXIT_IO, "io", exc)
    except OSError as exc:
        return _fail(EXIT_IO, "io", exc)


def main():
    sys.exit(dispatch())
