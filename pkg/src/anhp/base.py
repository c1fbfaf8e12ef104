"""Interfaces shared by the flat (A-NHP) and program-derived (A-NDTT) models."""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .events import EventSequence


class ImpossibleEventError(ValueError):
    """An intensity was requested for an event the database does not allow."""


@dataclass(frozen=True)
class BoundCertificate:
    """``bound >= intensity(event_type, t)`` for every ``t >= t0`` given a fixed prefix."""

    event_type: str
    t0: float
    bound: float


class Conditional(ABC):
    """The model's intensities after a fixed prefix, with no further events.

    ``types`` lists the event types that are possible after the prefix;
    columns of :meth:`intensities` follow that order.
    """

    t0: float
    types: list

    @abstractmethod
    def intensities(self, times) -> np.ndarray:
        """Array ``(len(times), len(types))`` of intensities at each time."""

    @abstractmethod
    def upper_bounds(self) -> np.ndarray:
        """Per-type upper bounds valid for all ``t >= t0``."""

    def total_intensity(self, times) -> np.ndarray:
        return self.intensities(times).sum(axis=1)

    def certificates(self) -> list[BoundCertificate]:
        return [BoundCertificate(e, self.t0, float(b)) for e, b in zip(self.types, self.upper_bounds())]


class EventModel(ABC):
    kind: str

    @abstractmethod
    def log_likelihood(self, seq: EventSequence, mc_times: np.ndarray, downsample=None) -> Tensor:
        """Differentiable Monte-Carlo log-likelihood of ``seq`` at the given sample times.

        ``downsample`` is ``None`` or ``(J, rng)``: the integrand then sums
        ``J`` uniformly drawn possible types per sample time, scaled by ``K/J``.
        """

    @abstractmethod
    def conditional(self, seq: EventSequence, n_prefix: int | None = None) -> Conditional:
        """Intensities given the first ``n_prefix`` events of ``seq`` (all by default)."""

    @abstractmethod
    def event_intensities(self, seq: EventSequence) -> tuple[np.ndarray, np.ndarray]:
        """``(lambda_{e_i}(t_i), total lambda(t_i))`` for every event of ``seq``."""

    def validate_sequence(self, seq: EventSequence, index: int | None = None) -> None:
        seq.validate(index=index)

    def intensity(self, event_type: str, t: float, seq: EventSequence) -> float:
        """lambda_e(t) given the events of ``seq`` strictly before ``t``."""
        n = int(np.searchsorted(seq.times, t, side="left"))
        cond = self.conditional(seq, n)
        if event_type not in cond.types:
            raise ImpossibleEventError(f"{event_type!r} is not possible at t={t}")
        return float(cond.intensities([t])[0, cond.types.index(event_type)])
