"""Uniform frequency-band splitting of a fullband spectrogram.

257 FFT bins are divided into n contiguous non-overlapping bands of
floor(257/n) bins each; the leftover bin always goes to the last band.
Supported split counts are 1, 2, 4 and 8.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .frontend import Spectrogram

FULLBAND_BINS = 257
SUPPORTED_SPLITS = (1, 2, 4, 8)
NYQUIST_KHZ = 8


@dataclass(frozen=True)
class SubbandPlan:
    n: int
    widths: tuple[int, ...]
    offsets: tuple[int, ...]

    def band_label(self, index: int) -> str:
        """Human-readable band range, e.g. '7-8 kHz' for band 7 of n=8."""
        khz_per_band = NYQUIST_KHZ / self.n
        lo = index * khz_per_band
        hi = (index + 1) * khz_per_band
        fmt = lambda v: f"{v:g}"
        return f"{fmt(lo)}-{fmt(hi)} kHz"


@dataclass
class SubSpectrogram:
    values: np.ndarray
    band_index: int
    plan: SubbandPlan

    @property
    def width(self) -> int:
        return self.values.shape[1]


def make_plan(n: int, n_bins: int = FULLBAND_BINS) -> SubbandPlan:
    """Build the uniform split-with-leftover plan for n in {1, 2, 4, 8}."""
    if n not in SUPPORTED_SPLITS:
        raise ConfigError(f"unsupported split count {n}; supported: {SUPPORTED_SPLITS}")
    base = n_bins // n
    widths = [base] * (n - 1) + [n_bins - base * (n - 1)]
    offsets = list(np.cumsum([0] + widths[:-1]))
    return SubbandPlan(n=n, widths=tuple(widths), offsets=tuple(int(o) for o in offsets))


def split(s: Spectrogram, plan: SubbandPlan) -> list[SubSpectrogram]:
    """Cut the spectrogram into the plan's bands, ascending in frequency."""
    if s.n_bins != sum(plan.widths):
        raise DataError(
            f"spectrogram has {s.n_bins} bins but plan covers {sum(plan.widths)}"
        )
    bands = []
    for i, (off, width) in enumerate(zip(plan.offsets, plan.widths)):
        bands.append(SubSpectrogram(values=s.values[:, off : off + width], band_index=i, plan=plan))
    return bands


def select(bands: list[SubSpectrogram], indices: list[int]) -> list[SubSpectrogram]:
    """Pick a subset of bands, preserving ascending frequency order."""
    if len(set(indices)) != len(indices):
        raise ConfigError(f"band indices must be distinct, got {indices}")
    n = len(bands)
    for i in indices:
        if not (0 <= i < n):
            raise ConfigError(f"band index {i} out of range for {n} bands")
    return [bands[i] for i in sorted(indices)]
