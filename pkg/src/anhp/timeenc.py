"""Sinusoidal continuous-time embeddings with a data-derived wavelength range."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = ["TimeEncodingConfig", "estimate_scales", "embed_time", "embed_times", "divisors"]


@dataclass(frozen=True)
class TimeEncodingConfig:
    """Scales ``m`` (shortest gap) and ``M`` (horizon) plus embedding size ``D``.

    Wavelengths form a geometric progression from ``2*pi*m`` up to (just
    below) ``2*pi*5M``.
    """

    m: float
    M: float
    D: int

    def __post_init__(self):
        if not (math.isfinite(self.m) and math.isfinite(self.M)) or not 0 < self.m <= self.M:
            raise ValueError(f"need 0 < m <= M, got m={self.m}, M={self.M}")
        if int(self.D) != self.D or self.D <= 0 or self.D % 2:
            raise ValueError(f"time embedding dimension must be a positive even integer, got {self.D}")

    def to_dict(self) -> dict:
        return {"m": self.m, "M": self.M, "D": self.D}

    @classmethod
    def from_dict(cls, d: dict) -> "TimeEncodingConfig":
        return cls(float(d["m"]), float(d["M"]), int(d["D"]))


def estimate_scales(sequences: Iterable, horizons: Sequence[float] | None = None) -> tuple[float, float]:
    """Return ``(m, M)`` from training data.

    ``sequences`` yields either objects with ``.times`` and ``.T`` attributes
    or plain arrays of event times (then ``horizons`` supplies each ``T``).
    ``m`` is the smallest positive gap between two events of one sequence; ``M``
    is the smallest power of two that is at least ``1.25 * max T``.
    """
    m = math.inf
    max_T = 0.0
    saw_pair = False
    for i, seq in enumerate(sequences):
        if hasattr(seq, "times"):
            times, T = np.asarray(seq.times, dtype=float), float(seq.T)
        else:
            times = np.asarray(seq, dtype=float)
            T = float(horizons[i]) if horizons is not None else (float(times.max()) if times.size else 0.0)
        max_T = max(max_T, T)
        if times.size < 2:
            continue
        saw_pair = True
        gaps = np.abs(np.diff(np.sort(times)))
        pos = gaps[gaps > 0]
        if pos.size:
            m = min(m, float(pos.min()))
    if not saw_pair:
        raise ValueError("need at least one sequence with two or more events to estimate time scales")
    if not math.isfinite(m):
        raise ValueError("all inter-event gaps are zero (duplicate timestamps); deduplicate or jitter the data")
    target = 1.25 * max_T
    M = 2.0 ** math.ceil(math.log2(target)) if target > 0 else 1.0
    return m, max(M, m)


def divisors(config: TimeEncodingConfig) -> np.ndarray:
    """Per-dimension factors ``(5M/m)^(2*floor(d/2)/D)``; the full divisor is ``m`` times this."""
    D = config.D
    ratio = 5.0 * (config.M / config.m)
    exps = 2.0 * (np.arange(D) // 2) / D
    return ratio ** exps


def embed_times(times, config: TimeEncodingConfig) -> np.ndarray:
    """Embeddings for a vector of times, shape ``(len(times), D)``.

    Even columns are sines, odd columns cosines.  The phase is formed as
    ``(t / m) / ratio**e`` so that rescaling ``t, m, M`` by a power of two
    leaves the result bit-for-bit unchanged.
    """
    t = np.asarray(times, dtype=np.float64).reshape(-1, 1)
    phase = (t / config.m) / divisors(config)[None, :]
    out = np.empty_like(phase)
    out[:, 0::2] = np.sin(phase[:, 0::2])
    out[:, 1::2] = np.cos(phase[:, 1::2])
    return out


def embed_time(t: float, config: TimeEncodingConfig) -> np.ndarray:
    return embed_times([t], config)[0]
