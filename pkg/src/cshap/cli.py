"""Command-line entry point.

Every subcommand reads one JSON run configuration (``--config``); flags
override it. All randomness flows from ``--seed``. Exit codes: 0 success,
1 usage or configuration error, 2 data error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, bundled_config, config_hash, convnet_config, decompose_params, load_config
from .dataset import (
    CLASSES,
    SplitPolicy,
    TraceFormatError,
    WindowProfile,
    cached_background,
    derive_rng,
    load_manifest_windows,
    parse_trace,
    phase_windows,
    select_background,
    split_policy,
    stack_windows,
    write_manifest,
)
from .decompose import decompose
from .explain import aggregate_global, explain_windows, read_attributions, write_attributions
from .model import evaluate, load_checkpoint, save_checkpoint, train_convnet, write_misclassified
from .report import local_windows, render_global, render_local, write_json
from .synth import SynthSpec, export_corpus, generate_corpus

log = logging.getLogger("cshap")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _provenance(out_dir: Path, cfg: dict, command: str, seed: int) -> Path:
    doc = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "versions": {"cshap": __version__, "python": ".".join(map(str, sys.version_info[:3])),
                     "numpy": np.__version__},
    }
    return write_json(out_dir / "provenance.json", doc)


def _relpath(p: Path, start: Path) -> str:
    try:
        return os.path.relpath(p.resolve(), start.resolve())
    except ValueError:  # different drive
        return str(p.resolve())


# -- subcommands -------------------------------------------------------------


def cmd_synth(args, cfg) -> int:
    sc = cfg["synth"]
    traces, truth = generate_corpus(SynthSpec(overlap=sc["overlap"]), sc["scenarios"], sc["cycles_per_scenario"],
                                    cfg["seed"], return_truth=True)
    out = Path(args.out)
    paths = export_corpus(traces, out, truth if args.truth else None)
    _provenance(out, cfg, "synth", cfg["seed"])
    print(f"wrote {len(paths)} traces to {out}")
    return EXIT_OK


def cmd_ingest(args, cfg) -> int:
    files = [Path(f) for f in args.traces]
    traces = [parse_trace(f, args.format) for f in files]
    split = split_policy(traces, SplitPolicy(phases_per_scenario=cfg["split"]["phases_per_scenario"],
                                             keep_kind=cfg["split"]["keep_kind"]))
    ws = args.window_size or cfg["windows"]["sizes"][0]
    profile = WindowProfile(ws, cfg["windows"]["shift"])
    inst = {"train": phase_windows(split.train, profile), "test": phase_windows(split.test, profile)}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(out, [_relpath(f, out.parent) for f in files], profile, split, inst)
    _provenance(out.parent, cfg, "ingest", cfg["seed"])
    print(f"{len(inst['train'])} train / {len(inst['test'])} test windows of size {ws}")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    data = load_manifest_windows(args.manifest, cfg["split"]["keep_kind"])
    x, y = stack_windows(data["train"])
    model = train_convnet(x, y, convnet_config(cfg, data["profile"].window_size))
    metrics = evaluate(model, data["test"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.ckpt")
    write_json(out / "metrics.json", metrics.to_dict())
    write_misclassified(metrics, out / "misclassified.csv")
    _provenance(out, cfg, "train", cfg["seed"])
    print(f"test accuracy {metrics.accuracy:.4f}")
    return EXIT_OK


def cmd_explain(args, cfg) -> int:
    data = load_manifest_windows(args.manifest, cfg["split"]["keep_kind"])
    model = load_checkpoint(args.checkpoint)
    ws = data["profile"].window_size
    if model.window_size != ws:
        raise UsageError(f"checkpoint window size {model.window_size} does not match manifest window size {ws}")
    seed = cfg["seed"]
    p = decompose_params(cfg)
    bgc = cfg["background"]
    bg_args = (data["train_phases"], ws, p, seed, bgc["core_type"], bgc["rounds"], bgc["cycles_per_scenario"])
    bg = cached_background(args.background_cache, *bg_args) if args.background_cache else select_background(*bg_args)
    stride = cfg["explain"]["offset_stride"]
    subset = [w for w in data["test"] if w.origin.offset % stride == 0]
    results = explain_windows(model, subset, bg, p, seed, cfg["explain"]["workers"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_attributions(results, out / "attributions.csv")
    summary = aggregate_global(results)
    write_json(out / "global.json", summary.as_dict())
    _provenance(out, cfg, "explain", seed)
    worst = max((r.efficiency_gap() for r in results), default=0.0)
    print(f"explained {len(results)} windows against {len(bg)} backgrounds, max efficiency gap {worst:.1e}")
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    results = read_attributions(args.attributions)
    if not results:
        raise ValueError(f"{args.attributions}: no attributions")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = aggregate_global(results, args.class_selector)
    render_global(summary, out / "global")
    if args.manifest:
        data = load_manifest_windows(args.manifest, cfg["split"]["keep_kind"])
        ws = data["profile"].window_size
        p = decompose_params(cfg)
        for ph in data["test_phases"]:
            mine = [r for r in results if (r.origin.trace_id, r.origin.phase) == ph.key]
            if not mine:
                continue
            d = decompose(ph.signal, p, derive_rng(cfg["seed"], "local", *ph.key))
            name = f"local_{ph.trace_id}_{ph.index}"
            render_local(ph.signal.values, local_windows(mine, ws), out / name, d,
                         title=f"{CLASSES[ph.label]} {ph.trace_id} phase {ph.index}")
    _provenance(out, cfg, "report", cfg["seed"])
    print(f"report written to {out}")
    return EXIT_OK


def cmd_experiment(args, cfg) -> int:
    from .experiment import run_experiment

    out = Path(args.out)
    res = run_experiment(cfg, out)
    s = res["summary"]
    for ws, a in s["accuracy"].items():
        print(f"W={ws}: mean test accuracy {a['mean']:.4f}, mean |SHAP| Levels {s['levels_mean_abs'][ws]:.4f}")
    for pair, delta in s["shap_delta"].items():
        print(f"SHAP delta {pair}: " + ", ".join(f"{k} {v:+.4f}" for k, v in delta.items()))
    return EXIT_OK


def cmd_verify(args, cfg) -> int:
    from .verify import check_gradients, check_pelt, check_shapley

    checks = [check_shapley(seed=cfg["seed"]), check_pelt(seed=cfg["seed"])]
    if not args.skip_gradients:
        checks.append(check_gradients())
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = _Parser(prog="cshap", description="Concept-level Shapley explanations for time-series classifiers.")
    ap.add_argument("--version", action="version", version=f"cshap {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic trace corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--overlap", type=float)
    p.add_argument("--scenarios", type=int)
    p.add_argument("--cycles", type=int, help="cycles per scenario")
    p.add_argument("--truth", action="store_true", help="also write ground-truth decompositions")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="parse traces, window and split; writes a manifest")
    p.add_argument("traces", nargs="+")
    p.add_argument("--out", required=True, help="manifest path")
    p.add_argument("--format", choices=("csv", "tsv"), default="csv")
    p.add_argument("--window-size", type=int)
    p.add_argument("--shift", type=int)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="train the reference classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", parents=[common], help="concept Shapley values for test windows")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--offset-stride", type=int, help="explain windows whose offset is a multiple of this")
    p.add_argument("--workers", type=int)
    p.add_argument("--background-cache", help="directory for cached background decompositions")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("report", parents=[common], help="figures and tables from attributions")
    p.add_argument("--attributions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="also draw local overlays for test phases")
    p.add_argument("--class-selector", choices=("ground-truth", "predicted"), default="ground-truth")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("experiment", help="multi-run experiments")
    esub = p.add_subparsers(dest="experiment", required=True, parser_class=_Parser)
    e = esub.add_parser("window-size", parents=[common], help="train and explain for each window size")
    e.add_argument("--out", required=True)
    e.add_argument("--sizes", type=int, nargs="+")
    e.add_argument("--epochs", type=int)
    e.add_argument("--workers", type=int)
    e.set_defaults(func=cmd_experiment, default_config=True)

    p = sub.add_parser("verify", parents=[common], help="run the oracle suites")
    p.add_argument("--skip-gradients", action="store_true")
    p.set_defaults(func=cmd_verify)
    return ap


def _overrides(args) -> dict:
    o: dict = {}

    def put(path, value):
        if value is None:
            return
        d = o
        for k in path[:-1]:
            d = d.setdefault(k, {})
        d[path[-1]] = value

    if args.seed is not None:
        put(("seed",), args.seed)
        put(("seeds",), [args.seed])
    a = vars(args)
    put(("synth", "overlap"), a.get("overlap"))
    put(("synth", "scenarios"), a.get("scenarios"))
    put(("synth", "cycles_per_scenario"), a.get("cycles"))
    put(("windows", "shift"), a.get("shift"))
    put(("windows", "sizes"), a.get("sizes"))
    put(("model", "epochs"), a.get("epochs"))
    put(("explain", "offset_stride"), a.get("offset_stride"))
    put(("explain", "workers"), a.get("workers"))
    return o


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        path = args.config
        if path is None and getattr(args, "default_config", False):
            path = bundled_config()
        if path is not None and not Path(path).exists():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = load_config(path, _overrides(args))
        return args.func(args, cfg)
    except (ConfigError, UsageError) as e:
        print(f"cshap: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, TraceFormatError, KeyError, ValueError) as e:
        print(f"cshap: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
