"""The window-size loop: train per window size, explain, compare Levels attribution."""

from __future__ import annotations

import logging
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_hash, convnet_config, decompose_params, seeds_of
from .dataset import (
    CLASSES,
    SplitPolicy,
    WindowProfile,
    derive_rng,
    phase_windows,
    select_background,
    split_policy,
    stack_windows,
)
from .decompose import decompose
from .explain import aggregate_global, compare_runs, explain_windows, write_attributions
from .model import evaluate, train_convnet, write_misclassified
from .report import (
    levels_histogram,
    local_windows,
    render_global,
    render_local,
    stability_report,
    window_levels_values,
    write_comparison,
    write_json,
)
from .signal import Concept
from .synth import SynthSpec, generate_corpus

log = logging.getLogger(__name__)


def write_provenance(out_dir, cfg: dict, seeds) -> Path:
    doc = {
        "config_hash": config_hash(cfg),
        "seeds": list(seeds),
        "versions": {
            "cshap": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    return write_json(Path(out_dir) / "provenance.json", doc)


def explained_subset(instances, offset_stride: int):
    return [w for w in instances if w.origin.offset % offset_stride == 0]


def run_seed(cfg: dict, seed: int, out_dir=None) -> dict:
    """One full pass over every configured window size for ``seed``."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    sc = cfg["synth"]
    corpus = generate_corpus(SynthSpec(overlap=sc["overlap"]), sc["scenarios"], sc["cycles_per_scenario"], seed)
    split = split_policy(corpus, SplitPolicy(phases_per_scenario=cfg["split"]["phases_per_scenario"],
                                             keep_kind=cfg["split"]["keep_kind"]))
    p = decompose_params(cfg, seed)
    bgc = cfg["background"]
    runs = {}
    for ws in sorted(cfg["windows"]["sizes"]):
        profile = WindowProfile(ws, cfg["windows"]["shift"])
        train_w = phase_windows(split.train, profile)
        test_w = phase_windows(split.test, profile)
        x, y = stack_windows(train_w)
        model = train_convnet(x, y, convnet_config(cfg, ws, seed))
        metrics = evaluate(model, test_w)
        log.info("seed %d W=%d accuracy %.4f", seed, ws, metrics.accuracy)
        bg = select_background(split.train, ws, p, seed, bgc["core_type"], bgc["rounds"], bgc["cycles_per_scenario"])
        subset = explained_subset(test_w, cfg["explain"]["offset_stride"])
        results = explain_windows(model, subset, bg, p, seed, cfg["explain"]["workers"])
        summary = aggregate_global(results)
        runs[ws] = {"metrics": metrics, "summary": summary, "results": results, "test": test_w, "train": train_w}
        if out is not None:
            _write_size_artifacts(out / f"W{ws}", cfg, seed, p, split, runs[ws], first=ws == min(runs))
    sizes = sorted(runs)
    comparisons = {}
    for ws in sizes[1:]:
        comparisons[(sizes[0], ws)] = compare_runs(runs[sizes[0]]["summary"], runs[ws]["summary"])
    stability = stability_report(
        [(ws, runs[ws]["metrics"].accuracy, runs[ws]["summary"]) for ws in sizes],
        None if out is None else out / "stability",
    )
    if out is not None:
        for (a, b), comp in comparisons.items():
            write_comparison(comp, out / f"shap_delta_W{a}_to_W{b}.csv")
    return {"runs": runs, "comparisons": comparisons, "stability": stability}


def _write_size_artifacts(d: Path, cfg, seed, p, split, run, first: bool):
    d.mkdir(parents=True, exist_ok=True)
    metrics, summary, results = run["metrics"], run["summary"], run["results"]
    write_json(d / "metrics.json", metrics.to_dict())
    write_misclassified(metrics, d / "misclassified.csv")
    write_attributions(results, d / "attributions.csv")
    render_global(summary, d / "global", f"Mean |SHAP| per concept, W={len(run['test'][0])}")
    ws = len(run["test"][0])
    rep = cfg["report"]
    # local overlays for the first test phases of Normal and NoFan
    shown = 0
    for ph in split.test:
        if shown >= rep["local_examples"]:
            break
        if CLASSES[ph.label] not in ("Normal", "NoFan") or ph.index != min(
            q.index for q in split.test if q.trace_id == ph.trace_id
        ):
            continue
        mine = [r for r in results if (r.origin.trace_id, r.origin.phase) == ph.key]
        if not mine:
            continue
        decomp = decompose(ph.signal, p, derive_rng(seed, "local", *ph.key))
        concepts = tuple(Concept) if first else (Concept.LEVELS,)
        render_local(ph.signal.values, local_windows(mine, ws), d / f"local_{CLASSES[ph.label]}_{ph.index}",
                     decomp, concepts, f"{CLASSES[ph.label]} phase {ph.index}, W={ws}")
        shown += 1
    train_sub = run["train"][:: rep["histogram_stride"]]
    tv = window_levels_values(train_sub, p, seed)
    lo, hi = float(tv.min()), float(tv.max())
    levels_histogram(tv, [w.label for w in train_sub], d / "levels_hist_train", rep["histogram_bins"],
                     f"Levels values, training windows, W={ws}", (lo, hi))
    by_id = {w.instance_id: w for w in run["test"]}
    mis = [by_id[iid] for iid, t, _ in metrics.misclassified if t in (0, 1)]
    if mis:
        mv = window_levels_values(mis, p, seed)
        levels_histogram(mv, [w.label for w in mis], d / "levels_hist_misclassified", rep["histogram_bins"],
                         f"Levels values, misclassified test windows, W={ws}",
                         (min(lo, float(mv.min())), max(hi, float(mv.max()))))


def run_experiment(cfg: dict, out_dir) -> dict:
    """Run every seed, write per-seed artifacts and an aggregate summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = seeds_of(cfg)
    write_provenance(out, cfg, seeds)
    per_seed = {}
    for s in seeds:
        per_seed[s] = run_seed(cfg, s, out / f"seed-{s}")
    sizes = sorted(cfg["windows"]["sizes"])
    acc = {ws: [per_seed[s]["runs"][ws]["metrics"].accuracy for s in seeds] for ws in sizes}
    summary = {
        "seeds": seeds,
        "accuracy": {str(ws): {"per_seed": acc[ws], "mean": float(np.mean(acc[ws]))} for ws in sizes},
        "levels_mean_abs": {
            str(ws): float(np.mean([per_seed[s]["runs"][ws]["summary"].mean_abs[Concept.LEVELS] for s in seeds]))
            for ws in sizes
        },
        "levels_std_abs": {
            str(ws): float(np.mean([per_seed[s]["runs"][ws]["summary"].std_abs[Concept.LEVELS] for s in seeds]))
            for ws in sizes
        },
        "shap_delta": {
            f"{a}->{b}": {
                c.label: float(np.mean([per_seed[s]["comparisons"][(a, b)].delta_mean[c] for s in seeds]))
                for c in Concept
            }
            for (a, b) in per_seed[seeds[0]]["comparisons"]
        },
    }
    write_json(out / "summary.json", summary)
    return {"per_seed": per_seed, "summary": summary}
