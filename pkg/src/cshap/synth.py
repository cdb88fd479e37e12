"""Synthetic machine traces with stored ground-truth concept components."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import CLASSES, CYCLE_OP, PhaseMark, ScenarioMeta, Trace, derive_rng, export_trace
from .decompose import write_debug
from .signal import Decomposition, Signal, recompose

CORE_TYPES = ("big", "LITTLE")


@dataclass(frozen=True)
class ClassProfile:
    levels: tuple = (0.60, 0.64)
    segment_length: tuple = (150, 350)  # uniform integer range, inclusive
    peak_rate: float = 0.002  # per sample
    peak_amplitude: float = 0.06
    lf_amplitude: float = 1.0
    lf_period: float = 300.0  # samples
    hf_std: float = 0.4
    scale: tuple = (0.008, 0.012)  # uniform range of the fluctuation amplitude

    def __post_init__(self):
        if not self.levels:
            raise ValueError("level palette must not be empty")
        if self.hf_std < 0 or self.peak_amplitude < 0 or self.lf_amplitude < 0:
            raise ValueError("amplitudes and stds must be >= 0")
        if not 0 <= self.peak_rate <= 1:
            raise ValueError("peak_rate must be in [0, 1]")
        lo, hi = self.segment_length
        if not 1 <= lo <= hi:
            raise ValueError("segment_length must satisfy 1 <= lo <= hi")
        if min(self.scale) < 0:
            raise ValueError("scale envelope must be >= 0")


def _default_profiles() -> dict:
    return {
        "Normal": ClassProfile(levels=(0.60, 0.64)),
        "NoFan": ClassProfile(levels=(0.68, 0.72)),
        "UnderVolt": ClassProfile(levels=(0.84, 0.88), hf_std=0.6),
    }


@dataclass(frozen=True)
class SynthSpec:
    """Per-class generation profiles plus the Normal/NoFan level overlap knob.

    With ``overlap`` f, NoFan's palette starts with the top round(f * P) levels
    of Normal's palette, followed by its own first levels.
    """

    profiles: dict = field(default_factory=_default_profiles)
    overlap: float = 0.0
    cycle_length: dict = field(default_factory=lambda: {"big": 1600, "LITTLE": 2000})
    sample_period: float = 1e-3
    idle_length: int = 60
    idle_level: float = 0.30

    def __post_init__(self):
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must be in [0, 1]")
        missing = set(CLASSES) - set(self.profiles)
        if missing:
            raise ValueError(f"missing class profiles: {sorted(missing)}")

    def palette(self, condition: str) -> tuple:
        if condition != "NoFan":
            return tuple(self.profiles[condition].levels)
        normal = self.profiles["Normal"].levels
        own = self.profiles["NoFan"].levels
        p = len(own)
        shared = int(round(self.overlap * min(p, len(normal))))
        return tuple(normal[len(normal) - shared:]) + tuple(own[: p - shared])

    def with_overlap(self, overlap: float) -> "SynthSpec":
        return replace(self, overlap=overlap)


def _segment_levels(prof: ClassProfile, palette, n: int, rng) -> tuple[np.ndarray, list]:
    levels = np.empty(n)
    bounds = []
    pos, prev = 0, None
    lo, hi = prof.segment_length
    while pos < n:
        length = int(rng.integers(lo, hi + 1))
        choices = [v for v in palette if v != prev] or list(palette)
        level = choices[int(rng.integers(len(choices)))]
        levels[pos:pos + length] = level
        pos += length
        bounds.append(min(pos, n))
        prev = level
    return levels, bounds[:-1]


def generate_cycle(spec: SynthSpec, condition: str, seed, core_type: str = "big",
                   length: int | None = None) -> tuple[Signal, Decomposition]:
    """One cycle-op phase built as levels + peaks + scale * (lf + hf)."""
    prof = spec.profiles[condition]
    n = int(length if length is not None else spec.cycle_length[core_type])
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    levels, _ = _segment_levels(prof, spec.palette(condition), n, rng)

    t = np.arange(n)
    phase = rng.uniform(0, 2 * np.pi)
    lf_raw = prof.lf_amplitude * np.sin(2 * np.pi * t / prof.lf_period + phase)
    hf_raw = rng.normal(0.0, prof.hf_std, size=n) if prof.hf_std > 0 else np.zeros(n)
    s = rng.uniform(*prof.scale)
    fluct = s * (lf_raw + hf_raw)
    scale = float(np.max(np.abs(fluct)))
    if scale > 0:
        lf, hf = s * lf_raw / scale, s * hf_raw / scale
    else:
        scale, lf, hf = 1.0, np.zeros(n), np.zeros(n)

    hits = rng.random(n) < prof.peak_rate
    peaks = np.zeros(n)
    peaks[hits] = prof.peak_amplitude * rng.uniform(0.8, 1.2, size=int(hits.sum()))
    truth = Decomposition(levels=levels, peaks=peaks, scale=scale, lf=lf, hf=hf,
                          peak_indices=np.flatnonzero(hits))
    values = recompose(truth)
    return Signal(t * spec.sample_period, values), truth


def scenario_meta(condition: str, k: int) -> ScenarioMeta:
    return ScenarioMeta(workload=f"detect{k // len(CORE_TYPES)}", core_type=CORE_TYPES[k % len(CORE_TYPES)],
                        condition=condition, rounds=1)


def generate_corpus(spec: SynthSpec, scenarios: int = 2, cycles_per_scenario: int = 10, seed: int = 0,
                    return_truth: bool = False):
    """``scenarios`` traces per class, each holding ``cycles_per_scenario`` cycle-op phases.

    Cycles are separated by short idle phases. With ``return_truth`` the
    ground-truth decomposition of every cycle is returned keyed by
    ``(trace_id, phase index)``.
    """
    traces, truth = [], {}
    for condition in CLASSES:
        for k in range(scenarios):
            meta = scenario_meta(condition, k)
            tid = meta.scenario_id
            parts, marks, pos = [], [], 0
            for c in range(cycles_per_scenario):
                rng = derive_rng(seed, "cycle", tid, c)
                sig, gt = generate_cycle(spec, condition, rng, meta.core_type)
                idle = spec.idle_level + 0.005 * rng.standard_normal(spec.idle_length)
                parts += [idle, sig.values]
                marks.append(PhaseMark(pos, pos + spec.idle_length, "idle"))
                pos += spec.idle_length
                marks.append(PhaseMark(pos, pos + len(sig), CYCLE_OP))
                pos += len(sig)
                truth[(tid, c)] = gt
            values = np.concatenate(parts) if parts else np.zeros(0)
            sig = Signal(np.arange(len(values)) * spec.sample_period, values)
            traces.append(Trace(tid, meta, sig, tuple(marks)))
    return (traces, truth) if return_truth else traces


def export_corpus(traces: Sequence[Trace], out_dir, truth: dict | None = None) -> list[Path]:
    """Write every trace (and optional ground truth) into ``out_dir``; returns trace paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in traces:
        paths.append(export_trace(t, out / f"{t.trace_id}.csv"))
    if truth:
        gt_dir = out / "truth"
        gt_dir.mkdir(exist_ok=True)
        for (tid, c), d in sorted(truth.items()):
            write_debug(gt_dir / f"{tid}-{c:03d}.csv", d, recompose(d))
    return paths
