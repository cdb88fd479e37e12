"""Concept construction: Levels, Peaks, Scale, LF and HF, extracted in that order."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .changepoint import CpdParams, pelt, segments_from_changepoints
from .signal import Decomposition, Signal


class PeakRule(str, Enum):
    TUKEY = "tukey"
    LITERAL_QUARTILE = "literal-quartile"


@dataclass(frozen=True)
class DecomposeParams:
    cpd: CpdParams = field(default_factory=CpdParams)
    resample_halo: int = 20
    resample_smooth_window: int = 20
    peak_rule: PeakRule = PeakRule.TUKEY
    tukey_k: float = 1.5
    peak_noise_smooth_window: int = 20
    lf_window: int = 75
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "peak_rule", PeakRule(self.peak_rule))
        if self.resample_halo < 0:
            raise ValueError("resample_halo must be >= 0")
        for name in ("resample_smooth_window", "peak_noise_smooth_window", "lf_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return {
            "cpd": {
                "subsample": self.cpd.subsample,
                "penalty": self.cpd.penalty,
                "kernel_bandwidth": self.cpd.kernel_bandwidth,
                "min_segment_length": self.cpd.min_segment_length,
            },
            "resample_halo": self.resample_halo,
            "resample_smooth_window": self.resample_smooth_window,
            "peak_rule": self.peak_rule.value,
            "tukey_k": self.tukey_k,
            "peak_noise_smooth_window": self.peak_noise_smooth_window,
            "lf_window": self.lf_window,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecomposeParams":
        d = dict(d)
        cpd = CpdParams(**d.pop("cpd", {}))
        return cls(cpd=cpd, **d)


def moving_average(x, window: int) -> np.ndarray:
    """Centered moving average; edge windows shrink to the available samples."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n == 0:
        return x.copy()
    idx = np.arange(n)
    lo = np.maximum(idx - (window - 1) // 2, 0)
    hi = np.minimum(idx + window // 2 + 1, n)
    csum = np.concatenate(([0.0], np.cumsum(x)))
    out = (csum[hi] - csum[lo]) / (hi - lo)
    # cumsum differences can drift off an exactly constant input
    if n and np.all(x == x[0]):
        out[:] = x[0]
    return out


def extract_levels(x, cps, p: DecomposeParams, rng: np.random.Generator):
    """Piecewise-constant segment means and the level-removed residual.

    Residual samples within ``resample_halo`` of a change point are redrawn from
    a normal fitted to the preceding segment's residual, then smoothed.
    Returns ``(levels, filtered, resampled_indices)``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    levels = np.empty(n)
    segments = segments_from_changepoints(cps, n)
    for a, b in segments:
        seg = x[a:b]
        # a float mean can miss a constant segment by an ulp
        levels[a:b] = seg[0] if np.all(seg == seg[0]) else seg.mean()
    residual = x - levels
    filtered = residual.copy()
    resampled = []
    halo = p.resample_halo
    if halo > 0:
        for a, b in segments[:-1]:
            lo, hi = max(b - halo, 0), min(b + halo, n)
            resid = residual[a:b]
            draw = rng.normal(resid.mean(), resid.std(), size=hi - lo)
            filtered[lo:hi] = moving_average(draw, p.resample_smooth_window)
            resampled.extend(range(lo, hi))
    return levels, filtered, np.unique(np.asarray(resampled, dtype=np.int64))


def peak_fences(x, p: DecomposeParams) -> tuple[float, float]:
    q1, q3 = np.quantile(np.asarray(x, dtype=np.float64), [0.25, 0.75])
    if p.peak_rule is PeakRule.LITERAL_QUARTILE:
        return float(q1), float(q3)
    iqr = q3 - q1
    return float(q1 - p.tukey_k * iqr), float(q3 + p.tukey_k * iqr)


def extract_peaks(x, p: DecomposeParams, rng: np.random.Generator):
    """Split statistical outliers off ``x``.

    Outliers are replaced by the median plus smoothed noise. Returns
    ``(peaks, filtered, peak_indices)`` with ``x == peaks + filtered``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 4:
        raise ValueError(f"peak extraction needs at least 4 samples, got {n}")
    lo, hi = peak_fences(x, p)
    is_peak = (x < lo) | (x > hi)
    peak_indices = np.flatnonzero(is_peak)
    filtered = x.copy()
    peaks = np.zeros(n)
    if len(peak_indices) == 0:
        return peaks, filtered, peak_indices
    rest = x[~is_peak]
    sigma = float(rest.std()) if len(rest) else 0.0
    noise = moving_average(rng.normal(0.0, sigma, size=n), p.peak_noise_smooth_window)
    replacement = np.median(x) + noise
    filtered[is_peak] = replacement[is_peak]
    peaks[is_peak] = x[is_peak] - filtered[is_peak]
    # keep x == peaks + filtered exact at peak indices
    filtered[is_peak] = x[is_peak] - peaks[is_peak]
    return peaks, filtered, peak_indices


def extract_scale_lf_hf(x, p: DecomposeParams):
    """Returns ``(scale, lf, hf)`` with ``x == scale * (lf + hf)``."""
    x = np.asarray(x, dtype=np.float64)
    scale = float(np.max(np.abs(x))) if len(x) else 0.0
    if scale == 0.0:
        scale = 1.0
    normalized = x / scale
    lf = moving_average(normalized, p.lf_window)
    hf = normalized - lf
    return scale, lf, hf


def decompose(s, p: DecomposeParams = DecomposeParams(), rng: np.random.Generator | None = None) -> Decomposition:
    """Run changepoints, levels, peaks and scale/LF/HF on a signal.

    ``s`` is a :class:`Signal` or a plain value array. Without ``rng`` a
    generator seeded from ``p.rng_seed`` is used.
    """
    values = s.values if isinstance(s, Signal) else np.asarray(s, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(p.rng_seed)
    cps = pelt(values, p.cpd)
    levels, filtered, resampled = extract_levels(values, cps, p, rng)
    if len(filtered) >= 4:
        peaks, filtered, peak_idx = extract_peaks(filtered, p, rng)
    else:
        peaks, peak_idx = np.zeros(len(filtered)), np.zeros(0, dtype=np.int64)
    scale, lf, hf = extract_scale_lf_hf(filtered, p)
    return Decomposition(
        levels=levels,
        peaks=peaks,
        scale=scale,
        lf=lf,
        hf=hf,
        resampled_indices=resampled,
        peak_indices=peak_idx,
    )


DEBUG_COLUMNS = ("index", "original", "levels", "peaks", "lf", "hf", "scale")


def write_debug(path, d: Decomposition, original=None) -> None:
    """Columnar text dump of a decomposition for plotting."""
    n = len(d)
    original = np.full(n, np.nan) if original is None else np.asarray(original, dtype=np.float64)
    with open(Path(path), "w", encoding="utf-8") as fh:
        fh.write(",".join(DEBUG_COLUMNS) + "\n")
        for i in range(n):
            row = (original[i], d.levels[i], d.peaks[i], d.lf[i], d.hf[i], d.scale)
            fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")


def read_debug(path) -> tuple[Decomposition, np.ndarray]:
    data = np.genfromtxt(Path(path), delimiter=",", names=True, dtype=np.float64)
    data = np.atleast_1d(data)
    peaks = data["peaks"]
    d = Decomposition(
        levels=data["levels"],
        peaks=peaks,
        scale=float(data["scale"][0]),
        lf=data["lf"],
        hf=data["hf"],
        peak_indices=np.flatnonzero(peaks != 0.0),
    )
    return d, data["original"]
