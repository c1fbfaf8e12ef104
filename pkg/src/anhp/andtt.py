"""Attentive neural Datalog-through-time: embeddings derived from a DTT program.

Each fact ``h`` true at time ``t`` has a layer stack.  Layer ``l`` adds to
layer ``l-1`` the ``tanh`` of

* a deduction term: for every ``:-`` rule, a softmax pool of
  ``W_r [1; g_1; ...; g_n]`` over the instantiations deducing ``h`` at ``t``
  (the ``g_i`` taken at layer ``l``, time ``t``), and
* one attention head per ``<-`` rule over the surviving add records of
  ``h``, keyed on ``[1; [[s]]; f; g_1; ...]`` at layer ``l-1``, time ``s``.

An event is possible exactly when it is a fact; its intensity uses the
top-layer embedding with the functor's ``w`` and ``tau``.
"""
from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from . import autodiff as ad
from .attention import attention_head
from .autodiff import Tensor
from .base import Conditional, EventModel, ImpossibleEventError
from .dtt.engine import (CompileError, DatabaseTimeline, check_deduction_acyclic, derivations, expand_splits,
                         possible_events)
from .dtt.syntax import ADD, DEDUCE, Atom, ParseError, Program, format_program, parse_atom, parse_program
from .events import EventSequence, SequenceError
from .flat import BOUND_MARGIN
from .intervals import Box, affine, dot_rows, normalized_attention, softmax_pool_hull
from .params import ParameterStore, inverse_softplus, type_embedding, uniform_matrix
from .rng import stream
from .timeenc import TimeEncodingConfig, embed_time

__all__ = ["AndttModel", "compile_program", "softmax_pool", "AndttConditional"]


def softmax_pool(X: Tensor, beta) -> Tensor:
    """Column-wise ``sum_i x_i exp(beta x_i) / sum_i exp(beta x_i)``; no rows gives zeros.

    Interpolates between the mean (``beta -> 0``) and the max (``beta -> inf``).
    """
    m, d = X.shape
    if m == 0:
        return Tensor(np.zeros(d))
    z = ad.mul(X, beta)
    shift = np.broadcast_to(z.value.max(axis=0), (m, d)).copy()
    w = ad.exp(ad.sub(z, shift))
    return ad.div(ad.sum(ad.mul(X, w), axis=0), ad.sum(w, axis=0))


def _one() -> np.ndarray:
    return np.ones(1)


class AndttModel(EventModel):
    kind = "andtt"

    def __init__(self, program: Program | str, time_config: TimeEncodingConfig, layers: int = 1,
                 constants=(), seed: int = 0):
        if isinstance(program, str):
            program = parse_program(program)
        self.source = program
        self.constants = sorted(set(map(str, constants)))
        self.program = expand_splits(program, self.constants)
        self.time_config = time_config
        self.Dt = time_config.D
        self.L = int(layers)
        if self.L < 0:
            raise CompileError("layers must be >= 0")
        self.seed = int(seed)
        self._compile()
        self.params = ParameterStore()
        self._init_params(stream(seed, "init"))

    # -- compilation -------------------------------------------------------

    def _compile(self):
        prog = self.program
        functors = prog.functors()
        undeclared = sorted(f for f in functors if f not in prog.dims)
        if undeclared:
            raise CompileError(f"undeclared functor(s) without :dim: {', '.join(undeclared)}")
        self.dims = dict(prog.dims)
        self.event_functors = list(prog.events)
        for r in prog.rules:
            if r.kind == ADD and not r.body:
                raise CompileError(f"add rule {r.name} needs a triggering event")
        self.order = check_deduction_acyclic(prog)
        self.add_rules = defaultdict(list)
        self.deduce_rules = defaultdict(list)
        for r in prog.rules:
            if r.kind == ADD:
                self.add_rules[r.head.functor].append(r)
            elif r.kind == DEDUCE:
                self.deduce_rules[r.head.functor].append(r)
        self.kq = {}
        for r in prog.rules:
            if r.kind == ADD:
                n = prog.kq.get(r.name, self.dims[r.head.functor])
                self.kq[r.name] = int(n)

    def _fan(self, r) -> int:
        return 1 + self.Dt + sum(self.dims[a.functor] for a in r.body)

    def _init_params(self, rng):
        p = self.params
        for f in sorted(self.dims):
            p.add(f"emb/{f}", type_embedding(rng, self.dims[f]))
        for l in range(1, self.L + 1):
            for r in self.program.rules:
                dh = self.dims[r.head.functor]
                if r.kind == ADD:
                    fan = self._fan(r)
                    p.add(f"layer{l}/{r.name}/V", uniform_matrix(rng, dh, fan))
                    p.add(f"layer{l}/{r.name}/K", uniform_matrix(rng, self.kq[r.name], fan))
                    p.add(f"layer{l}/{r.name}/Q", uniform_matrix(rng, self.kq[r.name], 1 + self.Dt + dh))
                elif r.kind == DEDUCE:
                    fan = 1 + sum(self.dims[a.functor] for a in r.body)
                    p.add(f"layer{l}/{r.name}/W", uniform_matrix(rng, dh, fan))
                    p.add(f"layer{l}/{r.name}/beta", np.array(1.0))
        for f in self.event_functors:
            p.add(f"w/{f}", uniform_matrix(rng, 1, 1 + self.dims[f])[0])
            p.add(f"tau_raw/{f}", np.array(inverse_softplus(1.0)))

    def config(self) -> dict:
        return {"program": format_program(self.source), "time": self.time_config.to_dict(), "layers": self.L,
                "constants": self.constants, "seed": self.seed}

    @classmethod
    def from_config(cls, cfg: dict) -> "AndttModel":
        return cls(cfg["program"], TimeEncodingConfig.from_dict(cfg["time"]), cfg["layers"],
                   cfg.get("constants", ()), cfg.get("seed", 0))

    # -- sequences ---------------------------------------------------------

    def _atoms(self, seq: EventSequence, index=None) -> list[Atom]:
        out = []
        for i, e in enumerate(seq.types):
            try:
                a = parse_atom(e)
            except ParseError as exc:
                raise SequenceError(f"event {i}: {e!r} is not a ground atom ({exc})", index) from None
            if not a.is_ground() or a.functor not in self.event_functors:
                raise SequenceError(f"event {i}: {e!r} is not an event of the program", index)
            out.append(a)
        return out

    def timeline(self, seq: EventSequence, index=None, check_possible: bool = True) -> DatabaseTimeline:
        atoms = self._atoms(seq, index)
        tl = DatabaseTimeline(self.program)
        for i, (a, t) in enumerate(zip(atoms, seq.times.tolist())):
            if check_possible and a not in possible_events(tl.states[-1], self.event_functors):
                raise SequenceError(f"event {i}: {a} is not possible at t={t}", index)
            tl.push(a, t)
        return tl

    def validate_sequence(self, seq: EventSequence, index=None) -> None:
        seq.validate(index=index)
        self.timeline(seq, index)

    # -- EventModel interface ----------------------------------------------

    def log_likelihood(self, seq: EventSequence, mc_times, downsample=None) -> Tensor:
        tl = self.timeline(seq)
        ev = _Pass(self, tl)
        terms = [ad.log(ev.intensity(a, t)) for a, t in zip(tl.events, tl.times)]
        total = ad.sum(ad.stack(terms)) if terms else Tensor(0.0)
        mc_times = np.asarray(mc_times, dtype=np.float64)
        n_mc = len(mc_times)
        lams = []
        for u in mc_times.tolist():
            cands = sorted(tl.possible_events(u))
            if not cands:
                continue
            scale = 1.0
            if downsample is not None and downsample[0] < len(cands):
                J, rng = downsample
                pick = np.sort(rng.choice(len(cands), size=J, replace=False))
                scale = len(cands) / J
                cands = [cands[k] for k in pick]
            for a in cands:
                lam = ev.intensity(a, u)
                lams.append(lam if scale == 1.0 else ad.mul(lam, scale))
        if lams and n_mc:
            integral = ad.mul(ad.sum(ad.stack(lams)), seq.T / n_mc)
            total = ad.sub(total, integral)
        return total

    def event_intensities(self, seq: EventSequence):
        tl = self.timeline(seq)
        ev = _Pass(self, tl)
        lam_e, lam_tot = [], []
        for a, t in zip(tl.events, tl.times):
            lam_e.append(ev.intensity(a, t).item())
            lam_tot.append(sum(ev.intensity(b, t).item() for b in sorted(tl.possible_events(t))))
        return np.array(lam_e), np.array(lam_tot)

    def conditional(self, seq: EventSequence, n_prefix: int | None = None) -> "AndttConditional":
        n = len(seq) if n_prefix is None else int(n_prefix)
        return AndttConditional(self, self.timeline(seq.prefix(n)))

    # -- inspection helpers ------------------------------------------------

    def embed_fact(self, h, t: float, timeline: DatabaseTimeline, layer: int | None = None) -> np.ndarray:
        h = parse_atom(h) if isinstance(h, str) else h
        if not timeline.holds(h, t):
            raise ValueError(f"{h} is not true at t={t}")
        return _Pass(self, timeline).embed(h, t, self.L if layer is None else layer).value.copy()

    def condition_key_value(self, rule_name: str, record, timeline: DatabaseTimeline, layer: int):
        p = _Pass(self, timeline)
        k, v = p.record_kv(record, self.program.rule(rule_name), layer)
        return k.value.copy(), v.value.copy()

    def deduction_term(self, h, t: float, timeline: DatabaseTimeline, layer: int) -> np.ndarray:
        h = parse_atom(h) if isinstance(h, str) else h
        p = _Pass(self, timeline)
        d = p.deduction(h, t, layer)
        return np.zeros(self.dims[h.functor]) if d is None else d.value.copy()


def compile_program(program, time_config: TimeEncodingConfig, layers: int = 1, constants=(), seed: int = 0):
    return AndttModel(program, time_config, layers, constants, seed)


class _Pass:
    """Memoised embeddings of facts along one timeline, for one forward pass."""

    def __init__(self, model: AndttModel, timeline: DatabaseTimeline):
        self.m = model
        self.tl = timeline
        self.memo: dict = {}
        self.rec_memo: dict = {}
        self.temb: dict = {}

    def time_emb(self, t: float) -> np.ndarray:
        e = self.temb.get(t)
        if e is None:
            e = self.temb[t] = embed_time(t, self.m.time_config)
        return e

    def embed(self, h: Atom, t: float, l: int) -> Tensor:
        key = (h, t, l)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        p = self.m.params
        if l == 0:
            out = p[f"emb/{h.functor}"]
        else:
            prev = self.embed(h, t, l - 1)
            terms = []
            d = self.deduction(h, t, l)
            if d is not None:
                terms.append(d)
            state = self.tl.state_at(t)
            q_in = None
            for r in self.m.add_rules.get(h.functor, ()):
                recs = state.records(h, r.name)
                if not recs:
                    continue
                if q_in is None:
                    q_in = ad.concat([_one(), self.time_emb(t), prev])
                q = ad.matmul(p[f"layer{l}/{r.name}/Q"], q_in)
                kv = [self.record_kv(rec, r, l) for rec in recs]
                keys = ad.stack([k for k, _ in kv])
                vals = ad.stack([v for _, v in kv])
                terms.append(attention_head(q, keys, vals))
            if terms:
                total = terms[0]
                for x in terms[1:]:
                    total = ad.add(total, x)
                out = ad.add(prev, ad.tanh(total))
            else:
                out = prev
        self.memo[key] = out
        return out

    def deduction(self, h: Atom, t: float, l: int):
        state = self.tl.state_at(t)
        p = self.m.params
        total = None
        for r in self.m.deduce_rules.get(h.functor, ()):
            tuples = derivations(r, h, state.index)
            if not tuples:
                continue
            rows = [ad.concat([_one()] + [self.embed(g, t, l) for g in tup]) for tup in tuples]
            Y = ad.matmul(ad.stack(rows), ad.transpose(p[f"layer{l}/{r.name}/W"]))
            pooled = softmax_pool(Y, p[f"layer{l}/{r.name}/beta"])
            total = pooled if total is None else ad.add(total, pooled)
        return total

    def record_kv(self, rec, r, l: int):
        key = (rec, l)
        hit = self.rec_memo.get(key)
        if hit is not None:
            return hit
        p = self.m.params
        s = rec.time
        parts = [_one(), self.time_emb(s)] + [self.embed(a, s, l - 1) for a in rec.condition_tuple]
        inp = ad.concat(parts)
        out = (ad.matmul(p[f"layer{l}/{r.name}/K"], inp), ad.matmul(p[f"layer{l}/{r.name}/V"], inp))
        self.rec_memo[key] = out
        return out

    def intensity(self, e: Atom, t: float) -> Tensor:
        if e.functor not in self.m.event_functors or not self.tl.holds(e, t):
            raise ImpossibleEventError(f"{e} is not possible at t={t}")
        p = self.m.params
        z = ad.matmul(p[f"w/{e.functor}"], ad.concat([_one(), self.embed(e, t, self.m.L)]))
        return ad.softplus(z, ad.softplus(p[f"tau_raw/{e.functor}"], 1.0))

    def forget_after(self, t0: float) -> None:
        self.memo = {k: v for k, v in self.memo.items() if k[1] <= t0}
        self.temb = {k: v for k, v in self.temb.items() if k <= t0}


class AndttConditional(Conditional):
    """Intensities after a fixed prefix; valid for query times after the last prefix event."""

    def __init__(self, model: AndttModel, timeline: DatabaseTimeline):
        self.model = model
        self.tl = timeline
        self.t0 = timeline.times[-1] if timeline.times else 0.0
        self.state = timeline.states[-1]
        self.atoms = sorted(possible_events(self.state, model.event_functors))
        self.types = [str(a) for a in self.atoms]
        self._pass = _Pass(model, timeline)
        self._bounds = None

    def intensities(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        if self.tl.times and np.any(times <= self.t0):
            raise ValueError("query times must follow the last prefix event")
        out = np.empty((len(times), len(self.atoms)))
        for i, t in enumerate(times.tolist()):
            for k, a in enumerate(self.atoms):
                out[i, k] = self._pass.intensity(a, t).item()
        self._pass.forget_after(self.t0)
        return out

    def upper_bounds(self) -> np.ndarray:
        if self._bounds is None:
            self._bounds = _andtt_bounds(self)
        return self._bounds


def _andtt_bounds(cond: AndttConditional) -> np.ndarray:
    m, p = cond.model, cond.model.params
    state, ps = cond.state, cond._pass
    tbox = Box(-np.ones(m.Dt), np.ones(m.Dt))
    memo: dict = {}

    def box(h: Atom, l: int) -> Box:
        key = (h, l)
        if key in memo:
            return memo[key]
        if l == 0:
            out = Box(p[f"emb/{h.functor}"].value)
        else:
            prev = box(h, l - 1)
            total = None
            for r in m.deduce_rules.get(h.functor, ()):
                tuples = derivations(r, h, state.index)
                if not tuples:
                    continue
                W = p[f"layer{l}/{r.name}/W"].value
                ys = [affine(W, Box.concat([Box(_one())] + [box(g, l) for g in tup])) for tup in tuples]
                pooled = softmax_pool_hull(ys)
                total = pooled if total is None else total + pooled
            for r in m.add_rules.get(h.functor, ()):
                recs = state.records(h, r.name)
                if not recs:
                    continue
                kv = [ps.record_kv(rec, r, l) for rec in recs]
                keys = np.stack([k.value for k, _ in kv])
                vals = np.stack([v.value for _, v in kv])
                Q = p[f"layer{l}/{r.name}/Q"].value
                scores = dot_rows(keys @ Q / math.sqrt(Q.shape[0]), Box.concat([Box(_one()), tbox, prev]))
                head = normalized_attention(scores, vals)
                total = head if total is None else total + head
            out = prev if total is None else prev + total.tanh()
        memo[key] = out
        return out

    bounds = np.zeros(len(cond.atoms))
    for k, a in enumerate(cond.atoms):
        w = p[f"w/{a.functor}"].value
        tau = float(ad.softplus(p[f"tau_raw/{a.functor}"], 1.0).value)
        z = affine(w[None, :], Box.concat([Box(_one()), box(a, m.L)]))
        bounds[k] = Box(z.hi).softplus(tau).hi[0]
    return bounds * (1.0 + BOUND_MARGIN)
