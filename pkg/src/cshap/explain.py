"""Exact concept-level Shapley attribution by coalition enumeration."""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .dataset import CLASSES, BackgroundSet, Origin, WindowInstance, derive_rng
from .decompose import DecomposeParams, decompose
from .model.base import Classifier
from .signal import CONCEPTS, FULL_MASK, N_CONCEPTS, Concept, ConceptMask, Decomposition, recompose, substitute_all

N_COALITIONS = 1 << N_CONCEPTS
ATTRIBUTION_COLUMNS = (
    "instance_id", "class", "concept", "phi", "base_value", "output", "predicted_class", "ground_truth_class",
)


@dataclass
class AttributionResult:
    phi: np.ndarray  # (n_classes, 5), concepts in Concept order
    base_value: np.ndarray  # (n_classes,), v(empty coalition)
    output: np.ndarray  # (n_classes,), v(full coalition), the model output on the window
    predicted_class: int
    ground_truth_class: Optional[int] = None
    origin: Origin = Origin("", 0, 0)
    values: Optional[np.ndarray] = field(default=None, repr=False)  # (32, n_classes)

    @property
    def instance_id(self) -> str:
        return self.origin.instance_id

    def phi_for(self, cls: int) -> dict:
        return {c: float(self.phi[cls, c]) for c in CONCEPTS}

    def efficiency_gap(self) -> float:
        return float(np.max(np.abs(self.phi.sum(axis=1) - (self.output - self.base_value))))


def shapley_weights(n: int = N_CONCEPTS) -> np.ndarray:
    """w[s] = s! (n - s - 1)! / n! for coalitions of size s."""
    return np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)])


def shapley_from_values(values: np.ndarray, n: int = N_CONCEPTS) -> np.ndarray:
    """Shapley values from a table of coalition values indexed by bitmask.

    ``values`` has shape (2**n, ...); the result has shape (n, ...).
    Summation runs over masks in increasing order, so results are bit-stable.
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) != 1 << n:
        raise ValueError(f"expected {1 << n} coalition values, got {len(values)}")
    w = shapley_weights(n)
    phi = np.zeros((n,) + values.shape[1:])
    for i in range(n):
        bit = 1 << i
        for s in range(1 << n):
            if s & bit:
                continue
            phi[i] += w[bin(s).count("1")] * (values[s | bit] - values[s])
    return phi


def shapley_by_permutations(values: np.ndarray, n: int = N_CONCEPTS) -> np.ndarray:
    """Average marginal contribution over all n! player orderings."""
    values = np.asarray(values, dtype=np.float64)
    phi = np.zeros((n,) + values.shape[1:])
    count = 0
    for order in itertools.permutations(range(n)):
        s = 0
        for i in order:
            phi[i] += values[s | 1 << i] - values[s]
            s |= 1 << i
        count += 1
    return phi / count


def instance_decomposition(metric, p: DecomposeParams, rng: np.random.Generator) -> Decomposition:
    """Decompose a window so that the full coalition reproduces it.

    Halo resampling replaces the residual around level changes; that residue
    is folded back into Levels so recompose() returns the original samples.
    """
    metric = np.asarray(metric, dtype=np.float64)
    d = decompose(metric, p, rng)
    if len(d.resampled_indices) == 0:
        return d
    levels = d.levels + (metric - recompose(d))
    return Decomposition(levels=levels, peaks=d.peaks, scale=d.scale, lf=d.lf, hf=d.hf,
                         resampled_indices=d.resampled_indices, peak_indices=d.peak_indices)


def _check_model(model: Classifier):
    if not getattr(model, "supports_masking", True):
        raise TypeError(f"{type(model).__name__} cannot score masked hybrids; SHAP needs a predict-capable model")


def coalition_values(model: Classifier, instance_decomp: Decomposition, background: BackgroundSet,
                     time_channel, masks: Sequence[int] = range(N_COALITIONS)) -> np.ndarray:
    """Mean class probabilities over the backgrounds for each coalition mask.

    The same background samples are paired across all coalitions. Returns an
    array of shape (len(masks), n_classes).
    """
    _check_model(model)
    if len(background) == 0:
        raise ValueError("background set is empty")
    if background.window_size != len(instance_decomp):
        raise ValueError(
            f"background length {background.window_size} does not match window length {len(instance_decomp)}"
        )
    masks = list(masks)
    hybrids = substitute_all(instance_decomp, background.decompositions, masks)  # (m, B, W)
    m, b, w = hybrids.shape
    batch = np.empty((m * b, 2, w))
    batch[:, 0, :] = np.asarray(time_channel, dtype=np.float64)
    batch[:, 1, :] = hybrids.reshape(m * b, w)
    probs = model.predict_proba(batch).reshape(m, b, -1)
    return probs.mean(axis=1)


def coalition_value(model: Classifier, instance_decomp: Decomposition, background: BackgroundSet,
                    keep, time_channel) -> np.ndarray:
    if isinstance(keep, ConceptMask):
        bits = keep.bits
    elif isinstance(keep, int):
        bits = keep
    else:
        bits = ConceptMask.of(keep).bits
    return coalition_values(model, instance_decomp, background, time_channel, [bits])[0]


def _explain(model, instance: WindowInstance, background, p: DecomposeParams, rng, combine: Callable):
    _check_model(model)
    if rng is None:
        rng = derive_rng(p.rng_seed, "explain", instance.instance_id)
    d = instance_decomposition(instance.metric_channel, p, rng)
    values = coalition_values(model, d, background, instance.time_channel)
    phi = combine(values).T  # (n_classes, 5)
    out = values[FULL_MASK]
    return AttributionResult(
        phi=phi,
        base_value=values[0].copy(),
        output=out.copy(),
        predicted_class=int(np.argmax(out)),
        ground_truth_class=None if instance.label is None else int(instance.label),
        origin=instance.origin,
        values=values,
    )


def exact_shap(model: Classifier, instance: WindowInstance, background: BackgroundSet,
               p: DecomposeParams = DecomposeParams(), rng: np.random.Generator | None = None) -> AttributionResult:
    """Exact Shapley values of the five concepts for every class.

    Evaluates 32 coalitions x |background| model calls. Without ``rng`` the
    instance decomposition is seeded from ``p.rng_seed`` and the instance id.
    """
    return _explain(model, instance, background, p, rng, shapley_from_values)


def shap_permutation_oracle(model: Classifier, instance: WindowInstance, background: BackgroundSet,
                            p: DecomposeParams = DecomposeParams(),
                            rng: np.random.Generator | None = None) -> AttributionResult:
    """Same as :func:`exact_shap`, via all 120 concept orderings."""
    return _explain(model, instance, background, p, rng, shapley_by_permutations)


def explain_windows(model: Classifier, instances: Sequence[WindowInstance], background: BackgroundSet,
                    p: DecomposeParams = DecomposeParams(), seed: int = 0, workers: int = 1) -> list:
    """Explain many windows; each window's RNG derives from ``seed`` and its id."""

    def one(inst):
        return exact_shap(model, inst, background, p, derive_rng(seed, "explain", inst.instance_id))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, instances))
    return [one(inst) for inst in instances]


# -- aggregation -------------------------------------------------------------


@dataclass
class GlobalSummary:
    mean_abs: np.ndarray  # (5,)
    std_abs: np.ndarray  # (5,)
    table: list  # rows of (instance_id, ground truth, predicted, phi (5,)) for the selected class
    class_selector: str = "ground-truth"

    def as_dict(self) -> dict:
        return {c.label: {"mean_abs": float(self.mean_abs[c]), "std_abs": float(self.std_abs[c])} for c in CONCEPTS}

    def phi_by_id(self) -> dict:
        return {row[0]: row[3] for row in self.table}


def aggregate_global(results: Sequence[AttributionResult], class_selector="ground-truth") -> GlobalSummary:
    """Mean and (population) standard deviation of |phi| per concept.

    ``class_selector`` picks which class's attributions to use: "ground-truth",
    "predicted", or a class index.
    """
    if not results:
        raise ValueError("no attribution results to aggregate")
    rows = []
    for r in results:
        if class_selector == "ground-truth":
            if r.ground_truth_class is None:
                raise ValueError(f"window {r.instance_id} has no ground truth class")
            cls = r.ground_truth_class
        elif class_selector == "predicted":
            cls = r.predicted_class
        else:
            cls = int(class_selector)
        rows.append((r.instance_id, r.ground_truth_class, r.predicted_class, r.phi[cls].copy()))
    rows.sort(key=lambda row: row[0])
    a = np.abs(np.stack([row[3] for row in rows]))
    return GlobalSummary(a.mean(axis=0), a.std(axis=0), rows, str(class_selector))


@dataclass
class RunComparison:
    delta_mean: np.ndarray  # (5,) mean over aligned windows of |phi_b| - |phi_a|
    delta_std: np.ndarray  # (5,) std of the per-window differences
    n_windows: int

    def as_dict(self) -> dict:
        return {
            c.label: {"delta_mean": float(self.delta_mean[c]), "delta_std": float(self.delta_std[c])}
            for c in CONCEPTS
        } | {"n_windows": self.n_windows}


def compare_runs(a: GlobalSummary, b: GlobalSummary) -> RunComparison:
    """Change in |phi| from run ``a`` to run ``b`` over windows sharing an origin."""
    pa, pb = a.phi_by_id(), b.phi_by_id()
    common = sorted(set(pa) & set(pb))
    if not common:
        raise ValueError("runs share no window origins")
    diff = np.stack([np.abs(pb[k]) - np.abs(pa[k]) for k in common])
    return RunComparison(diff.mean(axis=0), diff.std(axis=0), len(common))


# -- attribution files -------------------------------------------------------


def write_attributions(results: Sequence[AttributionResult], path) -> Path:
    """One row per (window, class, concept)."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ATTRIBUTION_COLUMNS)
        for r in results:
            gt = "" if r.ground_truth_class is None else CLASSES[r.ground_truth_class]
            for k, cls in enumerate(CLASSES):
                for c in CONCEPTS:
                    w.writerow([r.instance_id, cls, c.label, repr(float(r.phi[k, c])), repr(float(r.base_value[k])),
                                repr(float(r.output[k])), CLASSES[r.predicted_class], gt])
    return Path(path)


def read_attributions(path) -> list:
    from .signal import concept_from_label

    acc: dict = {}
    order = []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ATTRIBUTION_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            iid = row["instance_id"]
            if iid not in acc:
                order.append(iid)
                acc[iid] = {
                    "phi": np.zeros((len(CLASSES), N_CONCEPTS)),
                    "base": np.zeros(len(CLASSES)),
                    "out": np.zeros(len(CLASSES)),
                    "pred": CLASSES.index(row["predicted_class"]),
                    "gt": CLASSES.index(row["ground_truth_class"]) if row["ground_truth_class"] else None,
                }
            k = CLASSES.index(row["class"])
            c = concept_from_label(row["concept"])
            acc[iid]["phi"][k, c] = float(row["phi"])
            acc[iid]["base"][k] = float(row["base_value"])
            acc[iid]["out"][k] = float(row["output"])
    return [
        AttributionResult(a["phi"], a["base"], a["out"], a["pred"], a["gt"], Origin.parse(iid))
        for iid, a in ((i, acc[i]) for i in order)
    ]
