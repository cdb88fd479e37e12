"""Core value types: signals, concept decompositions and concept masking."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable

import numpy as np


class Concept(IntEnum):
    """The five decomposition concepts. The integer value is the coalition bit."""

    LEVELS = 0
    PEAKS = 1
    SCALE = 2
    LF = 3
    HF = 4

    @property
    def label(self) -> str:
        return CONCEPT_LABELS[self]


CONCEPTS: tuple[Concept, ...] = tuple(Concept)
CONCEPT_LABELS = {
    Concept.LEVELS: "Levels",
    Concept.PEAKS: "Peaks",
    Concept.SCALE: "Scale",
    Concept.LF: "LF",
    Concept.HF: "HF",
}
N_CONCEPTS = len(CONCEPTS)
FULL_MASK = (1 << N_CONCEPTS) - 1


def concept_from_label(label: str) -> Concept:
    for c, name in CONCEPT_LABELS.items():
        if name.lower() == label.lower():
            return c
    raise ValueError(f"unknown concept {label!r}")


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled univariate series with its time channel."""

    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.ndim != 1 or v.ndim != 1:
            raise ValueError("timestamps and values must be 1-D")
        if len(t) != len(v):
            raise ValueError(f"length mismatch: {len(t)} timestamps, {len(v)} values")
        if len(t) < 1:
            raise ValueError("signal must have at least one sample")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)

    def slice(self, start: int, stop: int) -> "Signal":
        return Signal(self.timestamps[start:stop], self.values[start:stop])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Signal):
            return NotImplemented
        return np.array_equal(self.timestamps, other.timestamps) and np.array_equal(
            self.values, other.values
        )

    __hash__ = None


@dataclass(frozen=True)
class Decomposition:
    """Five concept components with bookkeeping of modified indices.

    ``scale`` is a single positive scalar; :attr:`scale_series` broadcasts it.
    """

    levels: np.ndarray
    peaks: np.ndarray
    scale: float
    lf: np.ndarray
    hf: np.ndarray
    resampled_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    peak_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        arrays = {}
        for name in ("levels", "peaks", "lf", "hf"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.ndim != 1:
                raise ValueError(f"{name} must be 1-D")
            arrays[name] = a
        n = len(arrays["levels"])
        for name, a in arrays.items():
            if len(a) != n:
                raise ValueError(f"component {name} has length {len(a)}, expected {n}")
            object.__setattr__(self, name, a)
        scale = float(self.scale)
        if not scale > 0 or not np.isfinite(scale):
            raise ValueError(f"scale must be a positive finite number, got {scale}")
        object.__setattr__(self, "scale", scale)
        for name in ("resampled_indices", "peak_indices"):
            idx = np.unique(np.asarray(getattr(self, name), dtype=np.int64))
            if len(idx) and (idx[0] < 0 or idx[-1] >= n):
                raise ValueError(f"{name} out of bounds for length {n}")
            object.__setattr__(self, name, idx)
        outside = np.ones(n, dtype=bool)
        outside[self.peak_indices] = False
        if np.any(self.peaks[outside] != 0.0):
            raise ValueError("peaks must be zero outside peak_indices")

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def scale_series(self) -> np.ndarray:
        return np.full(len(self), self.scale)

    def component(self, concept: Concept) -> np.ndarray:
        if concept is Concept.SCALE:
            return self.scale_series
        return getattr(self, concept.name.lower())


@dataclass(frozen=True)
class ConceptMask:
    """Set of concepts kept from the explained instance."""

    keep: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "keep", frozenset(Concept(c) for c in self.keep))

    @classmethod
    def from_bits(cls, bits: int) -> "ConceptMask":
        if not 0 <= bits <= FULL_MASK:
            raise ValueError(f"mask bits out of range: {bits}")
        return cls(frozenset(c for c in CONCEPTS if bits >> c & 1))

    @classmethod
    def of(cls, concepts: Iterable[Concept]) -> "ConceptMask":
        return cls(frozenset(concepts))

    @classmethod
    def all(cls) -> "ConceptMask":
        return cls(frozenset(CONCEPTS))

    @property
    def bits(self) -> int:
        return sum(1 << c for c in self.keep)

    def __contains__(self, concept) -> bool:
        return concept in self.keep


def recompose(d: Decomposition) -> np.ndarray:
    """levels + peaks + scale * (lf + hf)."""
    return d.levels + d.peaks + d.scale * (d.lf + d.hf)


def substitute(instance: Decomposition, background: Decomposition, mask: ConceptMask | int) -> np.ndarray:
    """Recompose a hybrid taking kept concepts from ``instance``, the rest from ``background``."""
    if len(instance) != len(background):
        raise ValueError(
            f"length mismatch: instance {len(instance)} vs background {len(background)}; "
            "fit the background to the window length first"
        )
    bits = mask if isinstance(mask, int) else mask.bits

    def pick(c: Concept):
        src = instance if bits >> c & 1 else background
        return src.scale if c is Concept.SCALE else getattr(src, c.name.lower())

    return pick(Concept.LEVELS) + pick(Concept.PEAKS) + pick(Concept.SCALE) * (
        pick(Concept.LF) + pick(Concept.HF)
    )


def substitute_all(instance: Decomposition, backgrounds, masks) -> np.ndarray:
    """Vectorized :func:`substitute` for every (mask, background) pair.

    Returns an array of shape ``(len(masks), len(backgrounds), N)``.
    """
    masks = np.asarray([m if isinstance(m, int) else m.bits for m in masks], dtype=np.int64)
    n = len(instance)
    for b in backgrounds:
        if len(b) != n:
            raise ValueError(f"length mismatch: instance {n} vs background {len(b)}")
    bg = {
        c: np.stack([b.component(c) if c is not Concept.SCALE else np.full(1, b.scale) for b in backgrounds])
        for c in CONCEPTS
    }
    out = np.empty((len(masks), len(backgrounds), n))
    for k, bits in enumerate(masks):
        parts = {}
        for c in CONCEPTS:
            if bits >> c & 1:
                parts[c] = np.array([instance.scale]) if c is Concept.SCALE else instance.component(c)[None, :]
            else:
                parts[c] = bg[c]
        out[k] = parts[Concept.LEVELS] + parts[Concept.PEAKS] + parts[Concept.SCALE].reshape(-1, 1) * (
            parts[Concept.LF] + parts[Concept.HF]
        )
    return out
