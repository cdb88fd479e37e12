"""Diagnostic artifacts: global bars, local overlays, Levels histograms, stability tables.

Every plotted number is also written to a CSV or JSON twin.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import CLASSES, WindowInstance, derive_rng
from .decompose import DecomposeParams, decompose
from .explain import AttributionResult, GlobalSummary
from .signal import CONCEPTS, Concept, Decomposition
from .svg import Scale, Svg, fmt

REPORT_SCHEMA_VERSION = 1
CLASS_COLORS = {0: "#ffffff", 1: "#8e5bb5", 2: "#e69f00"}
CLASS_LINE_COLORS = {0: "#1b6ca8", 1: "#8e5bb5", 2: "#e69f00"}
CONCEPT_COLOR = "#2a7f62"


def _write_csv(path, header, rows) -> Path:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return Path(path)


def write_json(path, doc: dict) -> Path:
    doc = {"schema_version": REPORT_SCHEMA_VERSION, **doc}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return Path(path)


# -- global ------------------------------------------------------------------


def render_global(summary: GlobalSummary, out_prefix, title: str = "Mean |SHAP| per concept") -> tuple[Path, Path]:
    """Bar chart of mean |phi| per concept (fixed concept order) plus its CSV twin."""
    out_prefix = Path(out_prefix)
    csv_path = _write_csv(
        out_prefix.with_suffix(".csv"),
        ("concept", "mean_abs", "std_abs"),
        [(c.label, float(summary.mean_abs[c]), float(summary.std_abs[c])) for c in CONCEPTS],
    )
    w, h, left, bottom, top = 420, 280, 60, 40, 30
    svg = Svg(w, h, title)
    svg.text(w / 2, 18, title, size=13, anchor="middle")
    top_val = float(np.max(summary.mean_abs + summary.std_abs)) or 1.0
    y = Scale(0.0, top_val, h - bottom, top)
    slot = (w - left - 20) / len(CONCEPTS)
    svg.line(left, h - bottom, w - 20, h - bottom)
    svg.line(left, top, left, h - bottom)
    for tick in np.linspace(0, top_val, 5):
        svg.line(left - 4, y(tick), left, y(tick))
        svg.text(left - 6, y(tick) + 4, fmt(tick), size=9, anchor="end")
    for k, c in enumerate(CONCEPTS):
        x0 = left + k * slot + slot * 0.15
        m, s = float(summary.mean_abs[c]), float(summary.std_abs[c])
        svg.rect(x0, y(m), slot * 0.7, y(0) - y(m), fill=CONCEPT_COLOR, class_="bar", data_concept=c.label,
                 data_value=repr(m))
        cx = x0 + slot * 0.35
        svg.line(cx, y(m - s if m - s > 0 else 0), cx, y(m + s), stroke="#333")
        svg.text(cx, h - bottom + 16, c.label, size=10, anchor="middle")
    svg_path = out_prefix.with_suffix(".svg")
    svg.save(svg_path)
    return svg_path, csv_path


def read_global_csv(path) -> dict:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        return {row["concept"]: (float(row["mean_abs"]), float(row["std_abs"])) for row in csv.DictReader(fh)}


# -- local -------------------------------------------------------------------


@dataclass
class LocalWindow:
    offset: int
    size: int
    predicted: int
    truth: int
    phi: np.ndarray  # (5,) for the ground-truth class


def local_windows(results: Sequence[AttributionResult], window_size: int) -> list[LocalWindow]:
    out = []
    for r in sorted(results, key=lambda r: r.origin.offset):
        out.append(LocalWindow(r.origin.offset, window_size, r.predicted_class, r.ground_truth_class,
                               r.phi[r.ground_truth_class].copy()))
    return out


def render_local(signal, windows: Sequence[LocalWindow], out_prefix, decomposition: Decomposition | None = None,
                 concepts: Sequence[Concept] = CONCEPTS, title: str = "") -> tuple[Path, Path]:
    """Signal with predicted-class window overlays; one row per concept with its curve and phi bars.

    Misclassified windows get a red outline. Pass ``concepts=(Concept.LEVELS,)``
    for the reduced view.
    """
    out_prefix = Path(out_prefix)
    values = np.asarray(signal, dtype=np.float64)
    n = len(values)
    csv_path = _write_csv(
        out_prefix.with_suffix(".csv"),
        ("offset", "size", "predicted", "truth", "misclassified", *(c.label for c in CONCEPTS)),
        [(w.offset, w.size, CLASSES[w.predicted], CLASSES[w.truth], int(w.predicted != w.truth),
          *(float(v) for v in w.phi)) for w in windows],
    )
    row_h, left, right, gap = 110, 60, 20, 18
    width = 900
    height = 40 + row_h * (1 + len(concepts)) + gap * len(concepts) + 20
    svg = Svg(width, height, title or "Local explanation")
    if title:
        svg.text(width / 2, 18, title, size=13, anchor="middle")
    x = Scale(0, max(n - 1, 1), left, width - right)
    top = 30
    yv = Scale(float(values.min()), float(values.max()), top + row_h - 5, top + 5)
    # overlays: one band per window, stacked thinly to show overlap
    band = (row_h - 10) / max(len(windows), 1)
    for k, w in enumerate(windows):
        stroke = "#d62728" if w.predicted != w.truth else None
        svg.rect(x(w.offset), top + 5 + k * band, x(w.offset + w.size - 1) - x(w.offset), max(band, 1),
                 fill=CLASS_COLORS[w.predicted], fill_opacity=0.35, stroke=stroke,
                 class_="misclassified" if stroke else "window", data_offset=w.offset)
    svg.rect(left, top, width - left - right, row_h, fill="none", stroke="#999")
    idx = np.arange(n)
    svg.polyline(x(idx), yv(values), stroke="#000", stroke_width=0.8)
    svg.text(left - 6, top + 12, "signal", size=10, anchor="end")
    for r, c in enumerate(concepts):
        y0 = top + row_h + gap + r * (row_h + gap)
        svg.rect(left, y0, width - left - right, row_h, fill="none", stroke="#999")
        svg.text(left - 6, y0 + 12, c.label, size=10, anchor="end")
        if decomposition is not None:
            comp = decomposition.component(c)
            yc = Scale(float(comp.min()), float(comp.max()), y0 + row_h - 5, y0 + 5)
            svg.polyline(x(idx), yc(comp), stroke="#777", stroke_width=0.8)
        phis = np.array([w.phi[c] for w in windows]) if windows else np.zeros(1)
        lim = float(np.max(np.abs(phis))) or 1.0
        yp = Scale(-lim, lim, y0 + row_h - 5, y0 + 5)
        svg.line(left, yp(0), width - right, yp(0), stroke="#ccc")
        for w in windows:
            cx = x(w.offset + w.size / 2)
            p = float(w.phi[c])
            svg.rect(cx - 1.5, min(yp(p), yp(0)), 3, abs(yp(p) - yp(0)),
                     fill="#d62728" if w.predicted != w.truth else CONCEPT_COLOR)
    svg_path = out_prefix.with_suffix(".svg")
    svg.save(svg_path)
    return svg_path, csv_path


# -- levels histogram --------------------------------------------------------


def window_levels_values(instances: Sequence[WindowInstance], p: DecomposeParams, seed: int = 0) -> np.ndarray:
    """Mean of the Levels component of each window."""
    out = np.empty(len(instances))
    for k, inst in enumerate(instances):
        d = decompose(inst.metric_channel, p, derive_rng(seed, "levels", inst.instance_id))
        out[k] = d.levels.mean()
    return out


@dataclass
class LevelsHistogram:
    edges: np.ndarray
    counts: np.ndarray  # (3, bins)
    overlap_bins: np.ndarray  # bin indices where Normal and NoFan both have mass

    @property
    def shared_mass(self) -> int:
        return int(np.minimum(self.counts[0], self.counts[1]).sum())


def levels_histogram(values, labels, out_prefix=None, bins: int = 40, title: str = "Levels values per class",
                     value_range=None) -> LevelsHistogram:
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if value_range is None:
        value_range = (float(values.min()), float(values.max())) if len(values) else (0.0, 1.0)
    edges = np.histogram_bin_edges(values, bins=bins, range=value_range)
    counts = np.stack([np.histogram(values[labels == k], bins=edges)[0] for k in range(len(CLASSES))])
    overlap = np.flatnonzero((counts[0] > 0) & (counts[1] > 0))
    hist = LevelsHistogram(edges, counts, overlap)
    if out_prefix is None:
        return hist
    out_prefix = Path(out_prefix)
    _write_csv(
        out_prefix.with_suffix(".csv"),
        ("bin_lo", "bin_hi", *CLASSES, "overlap"),
        [(float(edges[i]), float(edges[i + 1]), *(int(counts[k, i]) for k in range(len(CLASSES))),
          int(i in set(overlap.tolist()))) for i in range(len(edges) - 1)],
    )
    w, h, left, bottom, top = 640, 300, 60, 40, 30
    svg = Svg(w, h, title)
    svg.text(w / 2, 18, title, size=13, anchor="middle")
    x = Scale(float(edges[0]), float(edges[-1]), left, w - 20)
    y = Scale(0, float(counts.max()) or 1.0, h - bottom, top)
    for i in overlap:
        svg.rect(x(edges[i]), top, x(edges[i + 1]) - x(edges[i]), h - bottom - top, fill="#fde0dd",
                 class_="overlap-bin")
    for k in range(len(CLASSES)):
        for i in range(len(edges) - 1):
            if counts[k, i]:
                svg.rect(x(edges[i]), y(counts[k, i]), x(edges[i + 1]) - x(edges[i]), y(0) - y(counts[k, i]),
                         fill=CLASS_LINE_COLORS[k], fill_opacity=0.45)
        svg.text(w - 25, top + 14 * (k + 1), CLASSES[k], size=10, anchor="end", fill=CLASS_LINE_COLORS[k])
    svg.line(left, h - bottom, w - 20, h - bottom)
    for tick in np.linspace(edges[0], edges[-1], 5):
        svg.text(x(tick), h - bottom + 14, fmt(tick), size=9, anchor="middle")
    svg.save(out_prefix.with_suffix(".svg"))
    return hist


# -- stability ---------------------------------------------------------------

STABILITY_COLUMNS = ("window_size", "accuracy", "levels_mean_abs", "levels_std_abs")
# reference pattern of the Levels |SHAP| std over window sizes 100/200/400; reported, never asserted
REFERENCE_LEVELS_STD = {100: 0.178, 200: 0.170, 400: 0.155}


def _monotone(seq, increasing: bool) -> bool:
    return all((b > a) if increasing else (b < a) for a, b in zip(seq[:-1], seq[1:]))


def stability_report(runs: Sequence[tuple], out_prefix=None) -> dict:
    """``runs`` holds (window_size, accuracy, GlobalSummary) tuples."""
    runs = sorted(runs, key=lambda r: r[0])
    rows = [
        {"window_size": int(ws), "accuracy": float(acc), "levels_mean_abs": float(s.mean_abs[Concept.LEVELS]),
         "levels_std_abs": float(s.std_abs[Concept.LEVELS])}
        for ws, acc, s in runs
    ]
    flags = {
        "accuracy_increasing": _monotone([r["accuracy"] for r in rows], True),
        "levels_mean_abs_increasing": _monotone([r["levels_mean_abs"] for r in rows], True),
        "levels_std_abs_decreasing": _monotone([r["levels_std_abs"] for r in rows], False),
    }
    doc = {"rows": rows, "flags": flags, "reference_levels_std_abs": {str(k): v for k, v in REFERENCE_LEVELS_STD.items()}}
    if out_prefix is not None:
        out_prefix = Path(out_prefix)
        _write_csv(out_prefix.with_suffix(".csv"), STABILITY_COLUMNS,
                   [tuple(r[c] for c in STABILITY_COLUMNS) for r in rows])
        write_json(out_prefix.with_suffix(".json"), doc)
    return doc


def write_comparison(comparison, path) -> Path:
    return _write_csv(
        path, ("concept", "delta_mean", "delta_std", "n_windows"),
        [(c.label, float(comparison.delta_mean[c]), float(comparison.delta_std[c]), comparison.n_windows)
         for c in CONCEPTS],
    )
