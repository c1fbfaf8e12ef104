"""Intensities, Monte-Carlo log-likelihood and maximum-likelihood training."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .base import EventModel
from .events import EventSequence
from .optim import Adam
from .rng import sequence_key, stream

__all__ = ["intensity", "mc_log_likelihood", "TrainingConfig", "TrainingDiverged", "TrainResult", "train",
           "eval_log_likelihood", "LikelihoodReport", "draw_mc_times"]


def intensity(model: EventModel, event_type: str, t: float, seq: EventSequence) -> float:
    """lambda_e(t) given the events of ``seq`` before ``t``."""
    return model.intensity(event_type, t, seq)


def draw_mc_times(T: float, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, T, size=int(n))


def _downsample_arg(model, downsample, rng):
    if downsample is None:
        return None
    return (int(downsample), rng)


def mc_log_likelihood(model: EventModel, seq: EventSequence, n_mc: int | None = None, rng=None,
                      mc_times=None, downsample: int | None = None, index: int | None = None) -> tuple[Tensor, Tape]:
    """``sum_i log lambda_{e_i}(t_i) - (T/n_mc) sum_j sum_e lambda_e(t_j)`` with ``t_j ~ U[0, T)``.

    Pass ``mc_times`` to freeze the sample points (e.g. for gradient checks).
    ``n_mc`` defaults to the number of events (at least one).
    """
    model.validate_sequence(seq, index)
    if mc_times is None:
        rng = np.random.default_rng() if rng is None else rng
        n = max(1, len(seq)) if n_mc is None else int(n_mc)
        mc_times = draw_mc_times(seq.T, n, rng)
    tape = Tape()
    with tape:
        ll = model.log_likelihood(seq, np.asarray(mc_times, dtype=np.float64),
                                  _downsample_arg(model, downsample, rng))
    return ll, tape


@dataclass
class TrainingConfig:
    lr: float = 1e-3
    max_epochs: int = 50
    patience: int = 5
    eval_multiplier: int = 10
    downsample: int | None = None
    downsample_threshold: int = 100
    seed: int = 0
    frozen_mc: bool = False

    def __post_init__(self):
        if self.lr <= 0 or self.max_epochs < 1 or self.patience < 1 or self.eval_multiplier < 1:
            raise ValueError("training settings must be positive")
        if self.downsample is not None and self.downsample < 1:
            raise ValueError("downsample count must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss or gradient; ``checkpoint`` holds the last finite parameters."""

    def __init__(self, message: str, checkpoint: dict, epoch: int, log: list):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.epoch = epoch
        self.log = log


@dataclass
class TrainResult:
    params: dict
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_dev_ll: float = -math.inf


@dataclass
class LikelihoodReport:
    """Per-sequence log-likelihoods with their time-only and type-only parts."""

    total: np.ndarray
    time: np.ndarray
    type: np.ndarray
    n_events: np.ndarray

    def nll_per_event(self) -> float:
        return float(-self.total.sum() / max(1, self.n_events.sum()))


def _n_possible(model) -> int:
    return len(getattr(model, "types", ())) or 0


def eval_log_likelihood(model: EventModel, dataset, multiplier: int = 10, seed: int = 0,
                        downsample: int | None = None) -> LikelihoodReport:
    """MC log-likelihood of every sequence with ``multiplier`` x (#events) sample points."""
    tot, tim, typ, n = [], [], [], []
    for i, seq in enumerate(dataset):
        model.validate_sequence(seq, i)
        rng = stream(seed, "mc-eval", *sequence_key(seq))
        mc = draw_mc_times(seq.T, multiplier * max(1, len(seq)), rng)
        ll = model.log_likelihood(seq, mc, _downsample_arg(model, downsample, rng)).item()
        lam_e, lam_tot = model.event_intensities(seq)
        type_ll = float(np.sum(np.log(lam_e) - np.log(lam_tot)))
        tot.append(ll)
        typ.append(type_ll)
        tim.append(ll - type_ll)
        n.append(len(seq))
    return LikelihoodReport(np.array(tot), np.array(tim), np.array(typ), np.array(n, dtype=int))


def _finite(grads: dict) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads.values())


def train(model: EventModel, train_set, dev_set, config: TrainingConfig | None = None,
          log_path=None, verbose: bool = False) -> TrainResult:
    """Adam on per-sequence negative log-likelihood, early-stopped on dev likelihood.

    The model ends up holding the best-dev parameters, which are also returned.
    """
    cfg = config or TrainingConfig()
    train_set = list(train_set)
    dev_set = list(dev_set) if dev_set is not None else []
    if not train_set:
        raise ValueError("training set is empty")
    for i, s in enumerate(train_set):
        model.validate_sequence(s, i)
    params = model.params.tensors()
    opt = Adam(params, lr=cfg.lr)
    downsample = cfg.downsample
    if downsample is None and _n_possible(model) > cfg.downsample_threshold:
        downsample = max(1, cfg.downsample_threshold)
    log: list = []
    best = model.params.to_arrays()
    best_dev, best_epoch, stale = -math.inf, 0, 0
    last_good = best
    fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            t_start = time.perf_counter()
            order = stream(cfg.seed, "order", epoch).permutation(len(train_set))
            total_ll, total_ev = 0.0, 0
            for i in order:
                seq = train_set[i]
                rng = stream(cfg.seed, "mc", 0 if cfg.frozen_mc else epoch, int(i))
                ll, tape = mc_log_likelihood(model, seq, rng=rng, downsample=downsample)
                grads = {p: -g for p, g in ad.backpropagate(tape, ll, params).items()}
                if not math.isfinite(ll.item()) or not _finite(grads):
                    raise TrainingDiverged(f"non-finite loss or gradient at epoch {epoch}, sequence {int(i)}",
                                           last_good, epoch, log)
                opt.step(grads)
                if not all(np.all(np.isfinite(p.value)) for p in params):
                    model.params.load_arrays(last_good)
                    raise TrainingDiverged(f"parameters became non-finite at epoch {epoch}", last_good, epoch, log)
                total_ll += ll.item()
                total_ev += len(seq)
            last_good = model.params.to_arrays()
            entry = {"epoch": epoch, "train_nll": -total_ll / max(1, total_ev)}
            if dev_set:
                rep = eval_log_likelihood(model, dev_set, cfg.eval_multiplier, seed=cfg.seed, downsample=downsample)
                dev_ll = float(rep.total.sum())
                entry["dev_nll"] = rep.nll_per_event()
            else:
                dev_ll = total_ll
            entry["wall_time"] = time.perf_counter() - t_start
            log.append(entry)
            if fh:
                fh.write(json.dumps(entry) + "\n")
                fh.flush()
            if verbose:
                print(json.dumps(entry))
            if dev_ll > best_dev:
                best_dev, best_epoch, stale = dev_ll, epoch, 0
                best = last_good
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    finally:
        if fh:
            fh.close()
    model.params.load_arrays(best)
    return TrainResult(best, log, best_epoch, best_dev)
