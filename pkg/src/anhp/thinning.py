"""Exact simulation by thinning and minimum-Bayes-risk next-event prediction."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import BoundCertificate, Conditional, EventModel, ImpossibleEventError
from .events import EventSequence

__all__ = ["BoundViolation", "intensity_upper_bound", "sample_next_event", "sample_next_times",
           "predict_time", "TimePrediction", "predict_type", "sample_sequence"]


class BoundViolation(RuntimeError):
    """An intensity exceeded its certificate; the sampler would be biased."""


def intensity_upper_bound(model: EventModel, event_type: str, seq: EventSequence,
                          n_prefix: int | None = None) -> BoundCertificate:
    cond = model.conditional(seq, n_prefix)
    if event_type not in cond.types:
        raise ImpossibleEventError(f"{event_type!r} is not possible after the prefix")
    return BoundCertificate(event_type, cond.t0, float(cond.upper_bounds()[cond.types.index(event_type)]))


def _check(lam_total, lam_star):
    if np.any(lam_total > lam_star):
        raise BoundViolation(f"total intensity {float(np.max(lam_total))} exceeds bound {lam_star}")


def sample_next_event(cond: Conditional, rng: np.random.Generator, horizon: float = math.inf,
                      max_proposals: int = 1_000_000):
    """One draw of the next ``(type, time)`` after ``cond.t0``, or ``None`` if none occurs before ``horizon``."""
    lam_star = float(np.sum(cond.upper_bounds()))
    if not cond.types or lam_star <= 0:
        return None
    t = cond.t0
    for _ in range(max_proposals):
        t = t + rng.exponential(1.0 / lam_star)
        if t >= horizon:
            return None
        lam = cond.intensities([t])[0]
        total = lam.sum()
        _check(total, lam_star)
        if rng.uniform() * lam_star < total:
            k = int(rng.choice(len(lam), p=lam / total))
            return cond.types[k], float(t)
    raise RuntimeError("thinning made no acceptance within the proposal budget")


def sample_next_times(cond: Conditional, n: int, rng: np.random.Generator, horizon: float = math.inf,
                      max_rounds: int = 100_000) -> np.ndarray:
    """``n`` independent next-event times (``horizon`` where none occurs first), run as parallel chains."""
    lam_star = float(np.sum(cond.upper_bounds()))
    out = np.full(n, horizon, dtype=np.float64)
    if not cond.types or lam_star <= 0:
        return out
    t = np.full(n, cond.t0)
    active = np.arange(n)
    for _ in range(max_rounds):
        if active.size == 0:
            return out
        t[active] += rng.exponential(1.0 / lam_star, size=active.size)
        alive = t[active] < horizon
        active = active[alive]
        if active.size == 0:
            return out
        total = cond.intensities(t[active]).sum(axis=1)
        _check(total, lam_star)
        acc = rng.uniform(size=active.size) * lam_star < total
        out[active[acc]] = t[active[acc]]
        active = active[~acc]
    raise RuntimeError("thinning made no acceptance within the proposal budget")


@dataclass
class TimePrediction:
    time: float
    censored: bool       # every sample ran past the horizon
    n_censored: int


def predict_time(cond: Conditional, n_samples: int = 100, rng=None, horizon: float = math.inf) -> TimePrediction:
    """MC estimate of the expected next-event time (the L2-optimal prediction)."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    draws = sample_next_times(cond, n_samples, rng, horizon)
    n_cens = int(np.sum(draws >= horizon)) if math.isfinite(horizon) else 0
    return TimePrediction(float(draws.mean()), n_cens == n_samples, n_cens)


def predict_type(cond: Conditional, t: float, restricted=None) -> str:
    """Most intense type at ``t`` among ``restricted`` (all possible types by default).

    Impossible members of ``restricted`` are skipped; ties go to the earliest
    type in ``cond.types``.
    """
    if restricted is None:
        idx = list(range(len(cond.types)))
    else:
        wanted = set(restricted)
        if not wanted:
            raise ValueError("restricted set is empty")
        idx = [k for k, e in enumerate(cond.types) if e in wanted]
    if not idx:
        raise ImpossibleEventError("no type in the restricted set is possible at this time")
    lam = cond.intensities([t])[0]
    best = idx[0]
    for k in idx[1:]:
        if lam[k] > lam[best]:
            best = k
    return cond.types[best]


def sample_sequence(model: EventModel, rng: np.random.Generator, T: float | None = None,
                    n_events: int | None = None, tail: float = 1.0, max_events: int = 100_000) -> EventSequence:
    """Simulate from the model.

    With ``T`` the window ``[0, T)`` is fixed.  With ``n_events`` exactly that
    many events are drawn and the window ends at ``t_I + tail``.
    """
    if (T is None) == (n_events is None):
        raise ValueError("give exactly one of T or n_events")
    horizon = math.inf if T is None else float(T)
    limit = max_events if n_events is None else int(n_events)
    times, types = [], []
    seq = EventSequence([], [], horizon if T is not None else 1.0)
    while len(types) < limit:
        cond = model.conditional(seq)
        ev = sample_next_event(cond, rng, horizon)
        if ev is None:
            break
        types.append(ev[0])
        times.append(ev[1])
        seq = EventSequence(times, types, seq.T)
    if n_events is not None:
        if len(types) < n_events:
            raise RuntimeError(f"process stopped after {len(types)} of {n_events} events")
        return EventSequence(times, types, (times[-1] if times else 0.0) + tail)
    return EventSequence(times, types, horizon)
