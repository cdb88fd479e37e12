"""Trace ingestion, phase cutting, sliding windows, train/test split and background sets."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .decompose import DecomposeParams, decompose
from .signal import Decomposition, Signal

log = logging.getLogger(__name__)

CLASSES = ("Normal", "NoFan", "UnderVolt")
N_CLASSES = len(CLASSES)
CYCLE_OP = "cycle-op"
TRACE_COLUMNS = ("timestamp_s", "value", "phase_kind")
DELIMITERS = {"csv": ",", "tsv": "\t"}


class TraceFormatError(ValueError):
    """Malformed trace file; ``line`` is the 1-based file line when known."""

    def __init__(self, message: str, line: Optional[int] = None, path=None):
        where = f"{path}:" if path is not None else ""
        where += f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


def class_index(label) -> int:
    if isinstance(label, (int, np.integer)):
        if not 0 <= label < N_CLASSES:
            raise ValueError(f"class index out of range: {label}")
        return int(label)
    try:
        return CLASSES.index(label)
    except ValueError:
        raise ValueError(f"unknown class {label!r}; expected one of {CLASSES}") from None


@dataclass(frozen=True)
class ScenarioMeta:
    workload: str
    core_type: str
    condition: str
    rounds: int = 1

    def __post_init__(self):
        if self.condition not in CLASSES:
            raise ValueError(f"condition must be one of {CLASSES}, got {self.condition!r}")
        object.__setattr__(self, "rounds", int(self.rounds))

    @property
    def scenario_id(self) -> str:
        return f"{self.workload}-{self.core_type}-{self.condition}-r{self.rounds}"

    @property
    def label(self) -> int:
        return CLASSES.index(self.condition)

    def to_dict(self) -> dict:
        return {
            "workload": self.workload,
            "core_type": self.core_type,
            "condition": self.condition,
            "rounds": self.rounds,
        }


class PhaseMark(NamedTuple):
    start: int
    end: int  # exclusive
    kind: str


@dataclass(frozen=True)
class Trace:
    trace_id: str
    scenario: ScenarioMeta
    signal: Signal
    phase_marks: tuple = ()

    def __post_init__(self):
        marks = tuple(PhaseMark(int(a), int(b), str(k)) for a, b, k in self.phase_marks)
        prev_end = 0
        for m in marks:
            if not (prev_end <= m.start < m.end <= len(self.signal)):
                raise ValueError(f"phase marks must be ordered, disjoint and in bounds: {m}")
            prev_end = m.end
        object.__setattr__(self, "phase_marks", marks)


@dataclass(frozen=True)
class Phase:
    """One compartmentalized phase of a trace, the unit of splitting."""

    trace_id: str
    index: int
    signal: Signal
    scenario: ScenarioMeta

    @property
    def label(self) -> int:
        return self.scenario.label

    @property
    def key(self) -> tuple[str, int]:
        return (self.trace_id, self.index)


@dataclass(frozen=True)
class WindowProfile:
    window_size: int
    shift: int = 10

    def __post_init__(self):
        if self.window_size < 2:
            raise ValueError("window_size must be >= 2")
        if self.shift < 1:
            raise ValueError("shift must be >= 1")


class Origin(NamedTuple):
    trace_id: str
    phase: int
    offset: int

    @property
    def instance_id(self) -> str:
        return f"{self.trace_id}/{self.phase}/{self.offset}"

    @classmethod
    def parse(cls, instance_id: str) -> "Origin":
        trace_id, phase, offset = instance_id.rsplit("/", 2)
        return cls(trace_id, int(phase), int(offset))


@dataclass(frozen=True)
class WindowInstance:
    """Fixed-length two-channel slice. The time channel holds offsets from the first sample."""

    time_channel: np.ndarray
    metric_channel: np.ndarray
    label: int
    scenario: Optional[ScenarioMeta] = None
    origin: Origin = Origin("", 0, 0)

    def __post_init__(self):
        if len(self.time_channel) != len(self.metric_channel):
            raise ValueError("channels must have equal length")

    def __len__(self) -> int:
        return len(self.metric_channel)

    @property
    def instance_id(self) -> str:
        return self.origin.instance_id

    def as_array(self, metric=None) -> np.ndarray:
        """(2, W) model input; ``metric`` overrides the metric channel."""
        m = self.metric_channel if metric is None else metric
        return np.stack([self.time_channel, m])


# -- ingestion ---------------------------------------------------------------


def parse_trace(path, format: str = "csv", meta: Optional[ScenarioMeta] = None, trace_id: Optional[str] = None) -> Trace:
    """Read a delimiter-separated trace file.

    Columns: ``timestamp_s, value[, phase_kind[, phase_id]]`` after a header row.
    Scenario metadata comes from ``meta`` or the sidecar ``<file>.json``.
    Consecutive rows sharing (phase_kind, phase_id) form one phase; empty
    phase_kind means no phase.
    """
    path = Path(path)
    if format not in DELIMITERS:
        raise ValueError(f"unknown trace format {format!r}")
    if meta is None or trace_id is None:
        side = sidecar_path(path)
        if not side.exists():
            raise TraceFormatError("missing scenario sidecar " + str(side), path=path)
        info = json.loads(side.read_text())
        meta = meta or ScenarioMeta(**info["scenario"])
        trace_id = trace_id or info.get("trace_id", path.stem)

    ts, vals, kinds = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=DELIMITERS[format])
        header = next(reader, None)
        if header is None:
            raise TraceFormatError("empty file", line=1, path=path)
        header = [h.strip() for h in header]
        if header[:2] != list(TRACE_COLUMNS[:2]):
            raise TraceFormatError(f"bad header {header}", line=1, path=path)
        ncol = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != ncol:
                raise TraceFormatError(f"expected {ncol} columns, got {len(row)}", line=lineno, path=path)
            try:
                t, v = float(row[0]), float(row[1])
            except ValueError:
                raise TraceFormatError(f"non-numeric value in {row[:2]}", line=lineno, path=path) from None
            if not (np.isfinite(t) and np.isfinite(v)):
                raise TraceFormatError("non-finite value", line=lineno, path=path)
            if ts and t <= ts[-1]:
                raise TraceFormatError(
                    f"row {lineno - 1}: timestamp {t} not after previous {ts[-1]}", line=lineno, path=path
                )
            ts.append(t)
            vals.append(v)
            kinds.append(tuple(c.strip() for c in row[2:]))
    if not ts:
        raise TraceFormatError("no data rows", line=2, path=path)

    marks = []
    i, n = 0, len(kinds)
    while i < n:
        j = i + 1
        while j < n and kinds[j] == kinds[i]:
            j += 1
        if kinds[i] and kinds[i][0]:
            marks.append(PhaseMark(i, j, kinds[i][0]))
        i = j
    return Trace(trace_id, meta, Signal(np.array(ts), np.array(vals)), tuple(marks))


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def export_trace(trace: Trace, path, format: str = "csv") -> Path:
    """Write ``trace`` in the format :func:`parse_trace` reads, plus its sidecar."""
    path = Path(path)
    kind = [""] * len(trace.signal)
    pid = [""] * len(trace.signal)
    for j, m in enumerate(trace.phase_marks):
        for i in range(m.start, m.end):
            kind[i] = m.kind
            pid[i] = str(j)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=DELIMITERS[format], lineterminator="\n")
        w.writerow([*TRACE_COLUMNS, "phase_id"])
        for i in range(len(trace.signal)):
            w.writerow([repr(float(trace.signal.timestamps[i])), repr(float(trace.signal.values[i])), kind[i], pid[i]])
    sidecar_path(path).write_text(
        json.dumps({"trace_id": trace.trace_id, "scenario": trace.scenario.to_dict()}, indent=2, sort_keys=True) + "\n"
    )
    return path


def cut_phases(t: Trace, keep_kind: str = CYCLE_OP) -> list[Signal]:
    return [t.signal.slice(m.start, m.end) for m in t.phase_marks if m.kind == keep_kind]


def trace_phases(t: Trace, keep_kind: str = CYCLE_OP) -> list[Phase]:
    return [Phase(t.trace_id, i, s, t.scenario) for i, s in enumerate(cut_phases(t, keep_kind))]


# -- windowing ---------------------------------------------------------------


def window_count(n: int, window_size: int, shift: int) -> int:
    if n < window_size:
        return 0
    return (n - window_size) // shift + 1


def slide_windows(phase: Signal, p: WindowProfile, label, meta: Optional[ScenarioMeta] = None,
                  trace_id: str = "", phase_index: int = 0) -> list[WindowInstance]:
    label = class_index(label)
    n = len(phase)
    out = []
    for k in range(window_count(n, p.window_size, p.shift)):
        off = k * p.shift
        ts = phase.timestamps[off:off + p.window_size]
        out.append(
            WindowInstance(
                time_channel=ts - ts[0],
                metric_channel=phase.values[off:off + p.window_size],
                label=label,
                scenario=meta,
                origin=Origin(trace_id, phase_index, off),
            )
        )
    return out


def phase_windows(phases: Sequence[Phase], p: WindowProfile) -> list[WindowInstance]:
    out = []
    for ph in phases:
        out.extend(slide_windows(ph.signal, p, ph.label, ph.scenario, ph.trace_id, ph.index))
    return out


def stack_windows(instances: Sequence[WindowInstance]) -> tuple[np.ndarray, np.ndarray]:
    """Return model inputs of shape (n, 2, W) and integer labels."""
    x = np.stack([w.as_array() for w in instances]) if instances else np.zeros((0, 2, 0))
    y = np.array([w.label for w in instances], dtype=np.int64)
    return x, y


# -- split -------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPolicy:
    """Hold out ``phases_per_scenario`` phases, spread from early to late, per test scenario.

    ``test_scenarios`` of None designates the first scenario (by id) of each class.
    """

    test_scenarios: Optional[tuple] = None
    phases_per_scenario: int = 2
    keep_kind: str = CYCLE_OP


@dataclass
class Split:
    train: list
    test: list
    balance: dict = field(default_factory=dict)


def _spread(n: int, k: int) -> list[int]:
    if k == 1:
        return [0]
    return sorted({int(round(v)) for v in np.linspace(0, n - 1, k)})


def split_policy(traces: Sequence[Trace], policy: SplitPolicy = SplitPolicy()) -> Split:
    by_scenario: dict[str, list[Phase]] = {}
    for t in traces:
        by_scenario.setdefault(t.scenario.scenario_id, []).extend(trace_phases(t, policy.keep_kind))
    if policy.test_scenarios is None:
        designated = []
        for c in CLASSES:
            ids = sorted(s for s, ph in by_scenario.items() if ph and ph[0].scenario.condition == c)
            if ids:
                designated.append(ids[0])
    else:
        designated = list(policy.test_scenarios)
    train, test = [], []
    for sid in sorted(by_scenario):
        phases = by_scenario[sid]
        if sid in designated:
            k = policy.phases_per_scenario
            if len(phases) < max(k, 2):
                raise ValueError(f"scenario {sid} has {len(phases)} phases, need at least {max(k, 2)}")
            held = set(_spread(len(phases), k))
            test.extend(ph for i, ph in enumerate(phases) if i in held)
            train.extend(ph for i, ph in enumerate(phases) if i not in held)
        else:
            train.extend(phases)
    missing = set(designated) - set(by_scenario)
    if missing:
        raise ValueError(f"test scenarios not present: {sorted(missing)}")
    balance = {
        part: {c: sum(1 for ph in phases if ph.scenario.condition == c) for c in CLASSES}
        for part, phases in (("train", train), ("test", test))
    }
    log.info("split balance: %s", balance)
    return Split(train, test, balance)


def window_balance(instances: Sequence[WindowInstance]) -> dict:
    counts = np.bincount([w.label for w in instances], minlength=N_CLASSES)
    return {c: int(counts[i]) for i, c in enumerate(CLASSES)}


# -- background --------------------------------------------------------------


def fit_length(component, w: int) -> np.ndarray:
    """Truncate from the end, or pad by repeating the final value, to length ``w``."""
    a = np.asarray(component, dtype=np.float64)
    if len(a) < 1:
        raise ValueError("component must be non-empty")
    if len(a) >= w:
        return a[:w].copy()
    return np.concatenate([a, np.full(w - len(a), a[-1])])


def fit_decomposition(d: Decomposition, w: int) -> Decomposition:
    peaks = fit_length(d.peaks, w)
    peak_idx = d.peak_indices[d.peak_indices < w]
    # padding repeats the last peak value; keep bookkeeping consistent
    if len(d) < w and d.peaks[-1] != 0.0:
        peak_idx = np.concatenate([peak_idx, np.arange(len(d), w)])
    return Decomposition(
        levels=fit_length(d.levels, w),
        peaks=peaks,
        scale=d.scale,
        lf=fit_length(d.lf, w),
        hf=fit_length(d.hf, w),
        resampled_indices=d.resampled_indices[d.resampled_indices < w],
        peak_indices=peak_idx,
    )


@dataclass(frozen=True)
class BackgroundSet:
    decompositions: tuple
    provenance: tuple  # (scenario_id, trace_id, phase index)

    def __post_init__(self):
        object.__setattr__(self, "decompositions", tuple(self.decompositions))
        object.__setattr__(self, "provenance", tuple(tuple(p) for p in self.provenance))
        lengths = {len(d) for d in self.decompositions}
        if len(lengths) > 1:
            raise ValueError(f"background decompositions differ in length: {sorted(lengths)}")

    def __len__(self) -> int:
        return len(self.decompositions)

    @property
    def window_size(self) -> int:
        return len(self.decompositions[0]) if self.decompositions else 0


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Generator keyed by ``seed`` and stable string keys, independent of call order."""
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    words += [zlib.crc32(str(k).encode()) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(words))


def select_background(train: Sequence[Phase], window_size: int, p: DecomposeParams = DecomposeParams(),
                      seed: int = 0, core_type: Optional[str] = None, rounds: Optional[int] = None,
                      cycles_per_scenario: int = 5) -> BackgroundSet:
    """Sample training cycles per matching scenario, decompose them and fit to ``window_size``."""
    by_scenario: dict[str, list[Phase]] = {}
    for ph in train:
        if core_type is not None and ph.scenario.core_type != core_type:
            continue
        if rounds is not None and ph.scenario.rounds != rounds:
            continue
        by_scenario.setdefault(ph.scenario.scenario_id, []).append(ph)
    if not by_scenario:
        raise ValueError(f"no training scenario matches core_type={core_type!r} rounds={rounds!r}")
    rng = derive_rng(seed, "background")
    decomps, prov = [], []
    for sid in sorted(by_scenario):
        phases = sorted(by_scenario[sid], key=lambda ph: ph.key)
        if len(phases) < cycles_per_scenario:
            log.warning("scenario %s has %d cycles, fewer than %d requested; using all",
                        sid, len(phases), cycles_per_scenario)
            chosen = list(range(len(phases)))
        else:
            chosen = sorted(rng.choice(len(phases), size=cycles_per_scenario, replace=False).tolist())
        for i in chosen:
            ph = phases[i]
            d = decompose(ph.signal, p, derive_rng(seed, "bg-decompose", ph.trace_id, ph.index))
            decomps.append(fit_decomposition(d, window_size))
            prov.append((sid, ph.trace_id, ph.index))
    return BackgroundSet(tuple(decomps), tuple(prov))


def background_cache_key(seed: int, core_type, rounds, window_size: int, p: DecomposeParams,
                         cycles_per_scenario: int = 5) -> str:
    blob = json.dumps(
        {"seed": seed, "core_type": core_type, "rounds": rounds, "W": window_size,
         "cycles": cycles_per_scenario, "params": p.to_dict()},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_background(bg: BackgroundSet, path) -> Path:
    path = Path(path)
    arrays = {}
    for i, d in enumerate(bg.decompositions):
        for name in ("levels", "peaks", "lf", "hf", "resampled_indices", "peak_indices"):
            arrays[f"{i}_{name}"] = getattr(d, name)
        arrays[f"{i}_scale"] = np.array([d.scale])
    arrays["provenance"] = np.array(json.dumps([list(p) for p in bg.provenance]))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_background(path) -> BackgroundSet:
    with np.load(Path(path)) as z:
        prov = [tuple(p) for p in json.loads(str(z["provenance"]))]
        decomps = []
        for i in range(len(prov)):
            decomps.append(
                Decomposition(
                    levels=z[f"{i}_levels"], peaks=z[f"{i}_peaks"], scale=float(z[f"{i}_scale"][0]),
                    lf=z[f"{i}_lf"], hf=z[f"{i}_hf"], resampled_indices=z[f"{i}_resampled_indices"],
                    peak_indices=z[f"{i}_peak_indices"],
                )
            )
    return BackgroundSet(tuple(decomps), tuple(prov))


def cached_background(cache_dir, train: Sequence[Phase], window_size: int, p: DecomposeParams,
                      seed: int, core_type=None, rounds=None, cycles_per_scenario: int = 5) -> BackgroundSet:
    key = background_cache_key(seed, core_type, rounds, window_size, p, cycles_per_scenario)
    path = Path(cache_dir) / f"background-{key}.npz"
    if path.exists():
        return load_background(path)
    bg = select_background(train, window_size, p, seed, core_type, rounds, cycles_per_scenario)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_background(bg, path)
    return bg


# -- manifest ----------------------------------------------------------------

MANIFEST_VERSION = 1


def write_manifest(path, trace_files: Sequence, profile: WindowProfile, split: Split,
                   instances: dict) -> Path:
    """JSON manifest listing traces, the window profile and every instance with label and split."""
    doc = {
        "schema_version": MANIFEST_VERSION,
        "traces": [str(p) for p in trace_files],
        "window_profile": {"window_size": profile.window_size, "shift": profile.shift},
        "balance": split.balance,
        "test_phases": sorted([list(ph.key) for ph in split.test]),
        "instances": [
            {"id": w.instance_id, "label": CLASSES[w.label], "split": part}
            for part in ("train", "test")
            for w in instances.get(part, [])
        ],
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest schema {doc.get('schema_version')!r}")
    return doc


def load_manifest_windows(path, keep_kind: str = CYCLE_OP) -> dict:
    """Rebuild train/test windows from a manifest and its trace files."""
    doc = read_manifest(path)
    base = Path(path).parent
    profile = WindowProfile(**doc["window_profile"])
    test_keys = {tuple(k) for k in doc["test_phases"]}
    train, test = [], []
    for tp in doc["traces"]:
        p = Path(tp)
        t = parse_trace(p if p.is_absolute() else base / p)
        for ph in trace_phases(t, keep_kind):
            (test if ph.key in test_keys else train).append(ph)
    return {
        "profile": profile,
        "train_phases": train,
        "test_phases": test,
        "train": phase_windows(train, profile),
        "test": phase_windows(test, profile),
    }
