"""Event sequences observed on a window ``[0, T)``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["EventSequence", "SequenceError"]


class SequenceError(ValueError):
    """A malformed event sequence; ``index`` is the sequence's position in its dataset."""

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        prefix = f"sequence {index}: " if index is not None else ""
        super().__init__(prefix + message)


@dataclass
class EventSequence:
    times: np.ndarray
    types: list
    T: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        self.types = [str(t) for t in self.types]
        self.T = float(self.T)

    def __len__(self) -> int:
        return len(self.types)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventSequence):
            return NotImplemented
        return (self.T == other.T and self.types == other.types
                and np.array_equal(self.times, other.times) and self.meta == other.meta)

    @property
    def events(self) -> list[tuple[str, float]]:
        return list(zip(self.types, self.times.tolist()))

    def prefix(self, n: int) -> "EventSequence":
        return EventSequence(self.times[:n].copy(), self.types[:n], self.T)

    def validate(self, vocabulary=None, index: int | None = None) -> None:
        """Raise :class:`SequenceError` unless times are finite, strictly increasing and in ``[0, T)``."""
        if len(self.times) != len(self.types):
            raise SequenceError("times and types differ in length", index)
        if not np.isfinite(self.T) or self.T <= 0:
            raise SequenceError(f"observation horizon T must be positive and finite, got {self.T}", index)
        t = self.times
        if not np.all(np.isfinite(t)):
            raise SequenceError("non-finite timestamp", index)
        if t.size and t[0] < 0:
            raise SequenceError(f"event 0 at t={t[0]} precedes the window start 0", index)
        bad = np.nonzero(np.diff(t) <= 0)[0]
        if bad.size:
            i = int(bad[0]) + 1
            raise SequenceError(f"event {i} at t={t[i]} does not come after t={t[i - 1]}", index)
        if t.size and t[-1] >= self.T:
            raise SequenceError(f"event {t.size - 1} at t={t[-1]} is not before T={self.T}", index)
        if vocabulary is not None:
            for i, e in enumerate(self.types):
                if e not in vocabulary:
                    raise SequenceError(f"event {i} has unknown type {e!r}", index)
