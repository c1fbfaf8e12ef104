"""Held-out evaluation: NLL per event, next-event time RMSE, type error rate, bootstrap CIs."""
from __future__ import annotations

import csv
import fnmatch
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dtt.syntax import ParseError, is_variable, parse_atom
from .likelihood import draw_mc_times
from .rng import sequence_key, stream
from .thinning import predict_time, predict_type

__all__ = ["CI", "MetricReport", "bootstrap_ci", "evaluate", "restricted_set", "restricted_candidates",
           "METRICS"]

METRICS = ("nll", "time", "type")


@dataclass
class CI:
    point: float
    lo: float
    hi: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"point": self.point, "lo": self.lo, "hi": self.hi, "degenerate": self.degenerate}


def bootstrap_ci(values, weights=None, n_replicates: int = 1000, seed: int = 0, level: float = 0.95,
                 transform=None) -> CI:
    """Percentile interval for ``sum(values) / sum(weights)`` under resampling of sequences.

    ``values`` is ``(n,)`` or ``(n, R)``; with a second axis each replicate
    draws, for every resampled sequence, one of its ``R`` interchangeable
    estimates (e.g. independent MC likelihood draws).  ``transform`` maps
    the ratio (e.g. ``sqrt`` for RMSE).  Fewer than two sequences give a
    zero-width interval flagged ``degenerate``.
    """
    if n_replicates < 100:
        raise ValueError("use at least 100 bootstrap replicates")
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    n, R = v.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    f = (lambda x: x) if transform is None else transform
    den = w.sum()
    point = float(f(v[:, 0].sum() / den)) if n and den > 0 else math.nan
    if n < 2:
        return CI(point, point, point, True)
    rng = stream(seed, "bootstrap")
    idx = rng.integers(0, n, size=(n_replicates, n))
    col = rng.integers(0, R, size=(n_replicates, n)) if R > 1 else np.zeros((n_replicates, n), dtype=int)
    num = v[idx, col].sum(axis=1)
    dens = w[idx].sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        reps = f(num / dens)
    reps = reps[np.isfinite(reps)]
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(reps, [a, 1.0 - a]) if reps.size else (point, point)
    return CI(point, float(min(lo, point)), float(max(hi, point)))


def _pattern_matches(pattern: str, event: str, binding_source: str) -> bool:
    """Atom patterns use ``*`` for any argument and capitalised variables that must equal the
    corresponding argument of ``binding_source``; plain strings are shell-style globs."""
    if "(" not in pattern:
        return fnmatch.fnmatchcase(event, pattern)
    try:
        pat = parse_atom(pattern.replace("*", "_"))
        ev = parse_atom(event)
        src = parse_atom(binding_source)
    except ParseError:
        return False
    if pat.functor != ev.functor or pat.arity != ev.arity:
        return False
    for k, a in enumerate(pat.args):
        if a.startswith("_"):
            continue
        if is_variable(a):
            if src.functor != pat.functor or src.arity != pat.arity:
                return False
            # every position carrying this variable must agree with the true event
            if ev.args[k] != src.args[k]:
                return False
        elif ev.args[k] != a:
            return False
    return True


def restricted_candidates(pattern: str, possible, true_type: str):
    """``(applies, candidates)``: whether the pattern covers the true event, and the possible types it allows."""
    if not _pattern_matches(pattern, true_type, true_type):
        return False, []
    return True, [e for e in possible if _pattern_matches(pattern, e, true_type)]


def restricted_set(pattern: str, possible, true_type: str) -> list:
    return restricted_candidates(pattern, possible, true_type)[1]


@dataclass
class MetricReport:
    metrics: tuple
    n_sequences: int
    n_events: int
    nll: CI | None = None
    time_rmse: CI | None = None
    type_error: CI | None = None
    per_sequence: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"n_sequences": self.n_sequences, "n_events": self.n_events}
        if self.nll is not None:
            out["nll_per_event"] = self.nll.to_dict()
        if self.time_rmse is not None:
            out["time_rmse"] = self.time_rmse.to_dict()
        if self.type_error is not None:
            out["type_error_rate"] = self.type_error.to_dict()
        out["per_sequence"] = {k: np.asarray(v).tolist() for k, v in self.per_sequence.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["metric", "value", "ci_lo", "ci_hi"])
        for name, ci in (("nll_per_event", self.nll), ("time_rmse", self.time_rmse),
                         ("type_error_rate", self.type_error)):
            if ci is not None:
                w.writerow([name, repr(ci.point), repr(ci.lo), repr(ci.hi)])
        return buf.getvalue()


def _sequence_metrics(model, seq, metrics, n_time_samples, restrict, seed, eval_multiplier, mc_pool):
    out = {"n": len(seq)}
    key = sequence_key(seq)
    if "nll" in metrics:
        nll = []
        for r in range(mc_pool):
            rng = stream(seed, "mc-eval", *key, r)
            mc = draw_mc_times(seq.T, eval_multiplier * max(1, len(seq)), rng)
            nll.append(-model.log_likelihood(seq, mc).item())
        out["nll"] = nll
    se, n_t, err, n_y = 0.0, 0, 0, 0
    if "time" in metrics or "type" in metrics:
        for k in range(len(seq)):
            cond = model.conditional(seq, k)
            true_e, true_t = seq.types[k], float(seq.times[k])
            if "time" in metrics and cond.types:
                pred = predict_time(cond, n_time_samples, stream(seed, "thinning", *key, k))
                se += (pred.time - true_t) ** 2
                n_t += 1
            if "type" in metrics:
                if restrict is None:
                    cands = None
                else:
                    applies, cands = restricted_candidates(restrict, cond.types, true_e)
                    if not applies or not cands:
                        continue
                err += int(predict_type(cond, true_t, cands) != true_e)
                n_y += 1
    out.update(se=se, n_time=n_t, err=err, n_type=n_y)
    return out


def evaluate(model, dataset, metrics=METRICS, n_time_samples: int = 100, restrict: str | None = None,
             seed: int = 0, n_replicates: int = 1000, eval_multiplier: int = 10, mc_pool: int = 20,
             threads: int = 1) -> MetricReport:
    """Score ``model`` on ``dataset``; each metric is a ratio over events with a sequence-bootstrap CI.

    The NLL interval resamples sequences and, for each, one of ``mc_pool``
    independent MC likelihood estimates, so it also reflects MC noise.
    """
    metrics = tuple(m for m in METRICS if m in set(metrics))
    seqs = list(dataset)
    for i, s in enumerate(seqs):
        model.validate_sequence(s, i)

    def one(i):
        return _sequence_metrics(model, seqs[i], metrics, n_time_samples, restrict, seed, eval_multiplier,
                                 mc_pool)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(one, range(len(seqs))))
    else:
        rows = [one(i) for i in range(len(seqs))]
    n = np.array([r["n"] for r in rows], dtype=float)
    rep = MetricReport(metrics, len(seqs), int(n.sum()))
    if "nll" in metrics:
        pool = np.array([r["nll"] for r in rows]).reshape(len(rows), mc_pool)
        rep.nll = bootstrap_ci(pool, n, n_replicates, seed)
        rep.per_sequence["nll"] = pool[:, 0]
    if "time" in metrics:
        se = np.array([r["se"] for r in rows])
        cnt = np.array([r["n_time"] for r in rows], dtype=float)
        rep.time_rmse = bootstrap_ci(se, cnt, n_replicates, seed, transform=np.sqrt)
        rep.per_sequence["time_se"] = se
        rep.per_sequence["time_count"] = cnt
    if "type" in metrics:
        err = np.array([r["err"] for r in rows], dtype=float)
        cnt = np.array([r["n_type"] for r in rows], dtype=float)
        rep.type_error = bootstrap_ci(err, cnt, n_replicates, seed)
        rep.per_sequence["type_errors"] = err
        rep.per_sequence["type_count"] = cnt
    rep.per_sequence["n_events"] = n
    return rep
