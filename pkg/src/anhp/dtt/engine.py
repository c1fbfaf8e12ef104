"""Interpreter for Datalog-through-time: deduction, event-driven updates, provenance.

The state used at time ``t`` is the database after every event strictly
before ``t``.  A fact added by an event at ``s`` and removed by one at ``u``
is therefore true on ``(s, u]``.
"""
from __future__ import annotations

import bisect
import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Iterator

from .syntax import DEDUCE, REMOVE, Atom, Program, Rule, is_variable, parse_atom

__all__ = ["AddRecord", "DatabaseState", "DatabaseTimeline", "TimeOrderError", "CompileError",
           "match", "substitute", "deduce_closure", "derivations", "apply_event", "initial_state",
           "expand_splits", "check_deduction_acyclic", "RemovalWinsWarning"]


class TimeOrderError(ValueError):
    pass


class CompileError(ValueError):
    pass


class RemovalWinsWarning(UserWarning):
    pass


def match(pattern: Atom, fact: Atom, binding: dict | None = None) -> dict | None:
    """Extend ``binding`` so that ``pattern`` becomes ``fact``, or ``None``."""
    if pattern.functor != fact.functor or len(pattern.args) != len(fact.args):
        return None
    b = dict(binding) if binding else {}
    for p, v in zip(pattern.args, fact.args):
        if is_variable(p):
            bound = b.get(p)
            if bound is None:
                b[p] = v
            elif bound != v:
                return None
        elif p != v:
            return None
    return b


def substitute(atom: Atom, binding: dict) -> Atom:
    return Atom(atom.functor, tuple(binding.get(a, a) if is_variable(a) else a for a in atom.args))


def _by_functor(facts: Iterable[Atom]) -> dict:
    idx = defaultdict(list)
    for f in facts:
        idx[f.functor].append(f)
    return idx


def _join(body, index, binding) -> Iterator[tuple[dict, tuple]]:
    """All bindings satisfying every atom of ``body`` against ``index``; yields (binding, ground tuple)."""
    if not body:
        yield binding, ()
        return
    first, rest = body[0], body[1:]
    for fact in index.get(first.functor, ()):
        b = match(first, fact, binding)
        if b is None:
            continue
        for b2, tup in _join(rest, index, b):
            yield b2, (fact,) + tup


def deduce_closure(rules: Iterable[Rule], extensional: Iterable[Atom]) -> frozenset:
    """Least fixpoint of the deduce rules over ``extensional`` (semi-naive iteration)."""
    rules = [r for r in rules if r.kind == DEDUCE]
    total = set(extensional)
    delta = set(total)
    index = _by_functor(total)
    while delta:
        d_index = _by_functor(delta)
        new = set()
        for r in rules:
            for i, atom in enumerate(r.body):
                # at least one body atom must come from the newest facts
                for fact in d_index.get(atom.functor, ()):
                    b = match(atom, fact)
                    if b is None:
                        continue
                    others = r.body[:i] + r.body[i + 1:]
                    for b2, _ in _join(others, index, b):
                        h = substitute(r.head, b2)
                        if h not in total:
                            new.add(h)
        for h in new:
            index[h.functor].append(h)
        total |= new
        delta = new
    return frozenset(total)


def derivations(rule: Rule, h: Atom, facts) -> list[tuple]:
    """Ground condition tuples through which ``rule`` deduces ``h`` from ``facts``."""
    b = match(rule.head, h)
    if b is None:
        return []
    index = facts if isinstance(facts, dict) else _by_functor(facts)
    return sorted({tup for _, tup in _join(rule.body, index, b)})


@dataclass(frozen=True, order=True)
class AddRecord:
    """``trigger`` at ``time`` added the fact via ``rule`` while ``conditions`` held."""

    time: float
    rule: str
    trigger: Atom
    conditions: tuple = ()

    @property
    def condition_tuple(self) -> tuple:
        return (self.trigger,) + self.conditions


class DatabaseState:
    """Extensional facts (with their surviving add records) plus the deduced closure."""

    def __init__(self, rules, extensional: dict, time: float = float("-inf")):
        self._rules = rules
        self.extensional = extensional      # Atom -> tuple[AddRecord, ...]
        self.time = time
        self._facts = None
        self._index = None

    @property
    def facts(self) -> frozenset:
        if self._facts is None:
            self._facts = deduce_closure(self._rules, self.extensional)
        return self._facts

    @property
    def index(self) -> dict:
        if self._index is None:
            self._index = dict(_by_functor(sorted(self.facts)))
        return self._index

    def holds(self, h: Atom) -> bool:
        return h in self.facts

    def records(self, h: Atom, rule: str | None = None) -> list[AddRecord]:
        recs = self.extensional.get(h, ())
        return [r for r in recs if rule is None or r.rule == rule]


def initial_state(program: Program) -> DatabaseState:
    return DatabaseState(program.rules, {f: () for f in program.facts})


def apply_event(program: Program, state: DatabaseState, event: Atom, time: float) -> DatabaseState:
    """State after ``event`` at ``time``; conditions are checked against ``state`` (just before the event)."""
    if not time > state.time:
        raise TimeOrderError(f"event at t={time} does not follow the last update at t={state.time}")
    if not event.is_ground():
        raise ValueError(f"event {event} is not ground")
    index = state.index
    adds: dict = defaultdict(list)
    removes = set()
    for r in program.rules:
        if r.kind == DEDUCE:
            continue
        b = match(r.trigger, event)
        if b is None:
            continue
        for b2, conds in _join(r.body[1:], index, b):
            h = substitute(r.head, b2)
            if r.kind == REMOVE:
                removes.add(h)
            else:
                adds[h].append(AddRecord(float(time), r.name, event, conds))
    ext = dict(state.extensional)
    for h in removes:
        ext.pop(h, None)
    for h, recs in adds.items():
        if h in removes:
            warnings.warn(f"{event}@{time} both adds and removes {h}; removal wins", RemovalWinsWarning,
                          stacklevel=2)
            continue
        ext[h] = ext.get(h, ()) + tuple(sorted(set(recs)))
    return DatabaseState(program.rules, ext, float(time))


class DatabaseTimeline:
    """Database states along one event sequence.

    ``states[k]`` is the database after the first ``k`` events.
    """

    def __init__(self, program: Program, events: Iterable = ()):
        self.program = program
        self.times: list[float] = []
        self.events: list[Atom] = []
        self.states = [initial_state(program)]
        self._event_functors = set(program.events)
        for e, t in events:
            self.push(parse_atom(e) if isinstance(e, str) else e, t)

    def push(self, event: Atom, time: float) -> DatabaseState:
        st = apply_event(self.program, self.states[-1], event, float(time))
        self.times.append(float(time))
        self.events.append(event)
        self.states.append(st)
        return st

    def index_at(self, t: float) -> int:
        """Number of events strictly before ``t``."""
        return bisect.bisect_left(self.times, t)

    def state_at(self, t: float) -> DatabaseState:
        return self.states[self.index_at(t)]

    def holds(self, h: Atom, t: float) -> bool:
        return self.state_at(t).holds(h)

    def history_for(self, h: Atom, rule: str, t: float) -> list[tuple[tuple, float]]:
        """Surviving add records of ``h`` via ``rule`` at ``t``, as ``(condition tuple, s)`` pairs."""
        return [(r.condition_tuple, r.time) for r in self.state_at(t).records(h, rule)]

    def possible_events(self, t: float) -> set:
        return possible_events(self.state_at(t), self._event_functors)

    def intervals(self, h: Atom) -> list[tuple[float, float]]:
        """Maximal periods ``(start, end]`` on which ``h`` holds (``end`` may be ``inf``); start ``-inf``
        stands for "from the beginning"."""
        out, start = [], None
        bounds = [float("-inf")] + self.times
        for k, st in enumerate(self.states):
            on = st.holds(h)
            if on and start is None:
                start = bounds[k]
            elif not on and start is not None:
                out.append((start, bounds[k]))
                start = None
        if start is not None:
            out.append((start, float("inf")))
        return out


def possible_events(state: DatabaseState, event_functors) -> set:
    fs = set(event_functors)
    return {f for f in state.facts if f.functor in fs}


def expand_splits(program: Program, constants: Iterable[str] = ()) -> Program:
    """Replace each ``:split r X`` rule by one copy per constant value of ``X``."""
    if not program.splits:
        return program
    consts = sorted(program.constants() | set(constants))
    by_rule = defaultdict(list)
    for r, v in program.splits:
        by_rule[r].append(v)
    rules = []
    for r in program.rules:
        if r.name not in by_rule:
            rules.append(r)
            continue
        copies = [({}, r.name)]
        for v in by_rule[r.name]:
            inside = r.head.variables().union(*(a.variables() for a in r.body))
            if v not in inside:
                raise CompileError(f":split variable {v} does not occur in rule {r.name}")
            copies = [({**b, v: c}, f"{n}[{v}={c}]") for b, n in copies for c in consts]
        for b, n in copies:
            rules.append(Rule(r.kind, substitute(r.head, b), tuple(substitute(a, b) for a in r.body), n))
    kq = {}
    for name, n in program.kq.items():
        for r in rules:
            if r.name == name or r.name.startswith(name + "["):
                kq[r.name] = n
    return Program(rules, list(program.facts), dict(program.dims), list(program.events), kq, [])


def check_deduction_acyclic(program: Program) -> list[str]:
    """Functor-level topological order of deduce dependencies; cycles are rejected."""
    deps = defaultdict(set)
    nodes = set(program.functors())
    for r in program.rules:
        if r.kind == DEDUCE:
            for g in r.body:
                deps[r.head.functor].add(g.functor)
    order, state = [], {}

    def visit(f, path):
        s = state.get(f)
        if s == 1:
            cyc = path[path.index(f):] + [f]
            raise CompileError(f"recursive deduction through {' -> '.join(cyc)} is not supported")
        if s == 2:
            return
        state[f] = 1
        for g in sorted(deps[f]):
            visit(g, path + [f])
        state[f] = 2
        order.append(f)

    for f in sorted(nodes):
        visit(f, [])
    return order
