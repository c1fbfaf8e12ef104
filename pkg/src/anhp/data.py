"""Dataset files (JSON lines) and synthetic data generation."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .events import EventSequence, SequenceError
from .rng import stream

__all__ = ["Dataset", "load_dataset", "save_dataset", "generate_synthetic", "split_path", "DATA_DIR_ENV"]

DATA_DIR_ENV = "ANHP_DATA_DIR"


@dataclass
class Dataset:
    sequences: list = field(default_factory=list)
    split: str | None = None

    def __iter__(self):
        return iter(self.sequences)

    def __len__(self):
        return len(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    def vocabulary(self) -> list:
        return sorted({e for s in self.sequences for e in s.types})

    def n_events(self) -> int:
        return sum(len(s) for s in self.sequences)


def _parse_line(obj, index: int) -> EventSequence:
    if not isinstance(obj, dict):
        raise SequenceError("each line must be a JSON object", index)
    if "T" not in obj or "events" not in obj:
        raise SequenceError("missing 'T' or 'events'", index)
    events = obj["events"]
    if not isinstance(events, list):
        raise SequenceError("'events' must be a list of [type, time] pairs", index)
    types, times = [], []
    for k, ev in enumerate(events):
        if not isinstance(ev, (list, tuple)) or len(ev) != 2 or not isinstance(ev[0], str):
            raise SequenceError(f"event {k} must be a [type, time] pair", index)
        try:
            times.append(float(ev[1]))
        except (TypeError, ValueError):
            raise SequenceError(f"event {k} has a non-numeric time", index) from None
        types.append(ev[0])
    try:
        T = float(obj["T"])
    except (TypeError, ValueError):
        raise SequenceError("'T' must be a number", index) from None
    meta = obj.get("meta", {})
    if not isinstance(meta, dict):
        raise SequenceError("'meta' must be an object", index)
    return EventSequence(np.array(times, dtype=np.float64), types, T, meta)


def load_dataset(path, vocabulary=None, model=None, split: str | None = None) -> Dataset:
    """Read and validate a JSON-lines dataset.

    Malformed lines raise :class:`SequenceError` carrying the sequence index.
    ``model`` (if given) additionally checks that events are possible under it.
    """
    seqs = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    for i, line in enumerate(lines):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SequenceError(f"invalid JSON ({exc.msg})", i) from None
        seq = _parse_line(obj, i)
        seq.validate(vocabulary=vocabulary, index=i)
        if model is not None:
            model.validate_sequence(seq, i)
        seqs.append(seq)
    return Dataset(seqs, split)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v)}")


def save_dataset(dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in dataset:
            obj = {"T": seq.T, "events": [[e, t] for e, t in seq.events]}
            if seq.meta:
                obj["meta"] = seq.meta
            fh.write(json.dumps(obj, default=_jsonable) + "\n")


def split_path(directory, split: str) -> Path:
    """``<directory>/<split>.jsonl``; relative directories resolve against ``$ANHP_DATA_DIR``."""
    d = Path(directory)
    if not d.is_absolute() and not d.exists() and os.environ.get(DATA_DIR_ENV):
        d = Path(os.environ[DATA_DIR_ENV]) / d
    return d / f"{split}.jsonl"


def generate_synthetic(model, n_seqs: int, seed: int = 0, length=(49, 99), T: float | None = None,
                       eval_multiplier: int = 10, record_ll: bool = True, offset: int = 0) -> Dataset:
    """Sample sequences from ``model`` by thinning.

    With ``length=(lo, hi)`` each sequence has ``I ~ Uniform{lo..hi}`` events
    and window ``T = t_I + 1``; with ``T`` every window is ``[0, T)``.  The
    generator's MC log-likelihood of each sequence is stored in ``meta``.
    ``offset`` shifts the per-sequence random streams, so that disjoint
    splits can be drawn from one seed.
    """
    from .likelihood import draw_mc_times
    from .thinning import sample_sequence

    seqs = []
    for i in range(n_seqs):
        rng = stream(seed, "data", offset + i)
        if T is None:
            n = int(rng.integers(length[0], length[1] + 1))
            seq = sample_sequence(model, rng, n_events=n, tail=1.0)
        else:
            seq = sample_sequence(model, rng, T=T)
        meta = {"generator_seed": int(seed), "index": offset + i}
        if record_ll:
            mc = draw_mc_times(seq.T, eval_multiplier * max(1, len(seq)), stream(seed, "mc-eval", offset + i))
            meta["true_ll"] = float(model.log_likelihood(seq, mc).item())
        seq.meta = meta
        seqs.append(seq)
    return Dataset(seqs)
