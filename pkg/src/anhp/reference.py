"""Closed-form point processes: constant and piecewise-constant intensities.

They satisfy the same model interface as the neural models and serve as
exact generators and as baselines whose likelihoods are known analytically.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .base import Conditional, EventModel
from .events import EventSequence


class PiecewiseConstantModel(EventModel):
    """Intensity ``rates[k, e]`` for absolute time in ``[breaks[k], breaks[k+1])``.

    ``breaks`` starts at 0 and the last segment extends to infinity.
    History has no effect.
    """

    kind = "piecewise"

    def __init__(self, types, breaks, rates):
        self.types = [str(e) for e in types]
        self.type_index = {e: i for i, e in enumerate(self.types)}
        self.breaks = np.asarray(breaks, dtype=np.float64)
        self.rates = np.atleast_2d(np.asarray(rates, dtype=np.float64))
        if self.breaks[0] != 0 or np.any(np.diff(self.breaks) <= 0):
            raise ValueError("breaks must start at 0 and increase")
        if self.rates.shape != (len(self.breaks), len(self.types)) or np.any(self.rates <= 0):
            raise ValueError("need one positive rate per segment and type")
        self.params = None

    def rate_at(self, times) -> np.ndarray:
        k = np.searchsorted(self.breaks, np.asarray(times, dtype=np.float64), side="right") - 1
        return self.rates[k]

    def cumulative(self, t: float) -> np.ndarray:
        """Per-type integral of the intensity over ``[0, t]``."""
        out = np.zeros(len(self.types))
        edges = np.append(self.breaks, np.inf)
        for k in range(len(self.breaks)):
            lo, hi = edges[k], min(edges[k + 1], t)
            if hi > lo:
                out += self.rates[k] * (hi - lo)
        return out

    def validate_sequence(self, seq, index=None):
        seq.validate(vocabulary=self.type_index, index=index)

    def exact_log_likelihood(self, seq: EventSequence) -> float:
        tid = [self.type_index[e] for e in seq.types]
        lam = self.rate_at(seq.times)[np.arange(len(tid)), tid] if tid else np.zeros(0)
        return float(np.log(lam).sum() - self.cumulative(seq.T).sum())

    def log_likelihood(self, seq, mc_times, downsample=None) -> Tensor:
        mc_times = np.asarray(mc_times, dtype=np.float64)
        ev, _ = self.event_intensities(seq)
        integral = self.rate_at(mc_times).sum() * seq.T / len(mc_times) if len(mc_times) else 0.0
        return ad.sub(Tensor(float(np.log(ev).sum())), Tensor(float(integral)))

    def event_intensities(self, seq):
        if len(seq) == 0:
            return np.zeros(0), np.zeros(0)
        lam = self.rate_at(seq.times)
        tid = [self.type_index[e] for e in seq.types]
        return lam[np.arange(len(tid)), tid], lam.sum(axis=1)

    def conditional(self, seq, n_prefix=None):
        n = len(seq) if n_prefix is None else n_prefix
        t0 = float(seq.times[n - 1]) if n else 0.0
        return _PiecewiseConditional(self, t0)

    def next_time_cdf(self, t0: float, x) -> np.ndarray:
        """P(next event <= x | no event in (t0, x]) for the total process."""
        x = np.asarray(x, dtype=np.float64)
        base = self.cumulative(t0).sum()
        return 1.0 - np.exp(-(np.array([self.cumulative(v).sum() for v in x.ravel()]) - base)).reshape(x.shape)


class ConstantRateModel(PiecewiseConstantModel):
    kind = "constant"

    def __init__(self, rates: dict):
        super().__init__(list(rates), [0.0], [list(rates.values())])


class _PiecewiseConditional(Conditional):
    def __init__(self, model, t0):
        self.model = model
        self.t0 = t0
        self.types = list(model.types)

    def intensities(self, times):
        return self.model.rate_at(np.asarray(times, dtype=np.float64).reshape(-1))

    def upper_bounds(self):
        k = np.searchsorted(self.model.breaks, self.t0, side="right") - 1
        return self.model.rates[k:].max(axis=0)
