"""Independent reference implementations used only by the tests.

Nothing here imports the package's attention, encoding or interpreter code;
the oracles are deliberately naive loops.
"""
from __future__ import annotations

import math
import random

import numpy as np


# -- time embedding and flat model -----------------------------------------------

def time_embedding(t, m, M, D):
    out = np.empty(D)
    for d in range(D):
        if d % 2 == 0:
            out[d] = math.sin(t / (m * (5 * M / m) ** (d / D)))
        else:
            out[d] = math.cos(t / (m * (5 * M / m) ** ((d - 1) / D)))
    return out


def softplus(x, tau):
    return tau * math.log1p(math.exp(x / tau)) if x / tau < 30 else x + tau * math.log1p(math.exp(-x / tau))


class FlatOracle:
    """Straight-line loops over events, layers, rules and history entries."""

    def __init__(self, model):
        self.P = {k: np.array(v) for k, v in model.params.to_arrays().items()}
        self.types = list(model.types)
        self.D, self.L = model.D, model.L
        tc = model.time_config
        self.m, self.M, self.Dt = tc.m, tc.M, tc.D
        self.rules = []
        for r in model.rules:
            heads = set(self.types) if r.heads is None else set(r.heads)
            srcs = set(self.types) if r.sources is None else set(r.sources)
            self.rules.append((r.name, heads, srcs, r.kq or self.D))
        self.coarse = model.coarse_spec
        self.class_of = {e: int(model.class_of[i]) for i, e in enumerate(self.types)}

    def _inp(self, t, x):
        return np.concatenate([[1.0], time_embedding(t, self.m, self.M, self.Dt), x])

    def _head(self, name, l, kq, qin, history):
        Q = self.P[f"layer{l}/{name}/Q"]
        K = self.P[f"layer{l}/{name}/K"]
        V = self.P[f"layer{l}/{name}/V"]
        q = Q @ qin
        num = np.zeros(self.D)
        den = 1.0
        for hin in history:
            a = math.exp(float((K @ hin) @ q) / math.sqrt(kq))
            num = num + a * (V @ hin)
            den += a
        return num / den

    def event_layers(self, times, types):
        """layers[l][j]: embedding of actual event j at layer l."""
        emb = self.P["type_emb"]
        n = len(times)
        layers = [[emb[self.types.index(e)].copy() for e in types]]
        for l in range(1, self.L + 1):
            prev = layers[-1]
            cur = []
            for i in range(n):
                total = np.zeros(self.D)
                used = False
                for name, heads, srcs, kq in self.rules:
                    if types[i] not in heads:
                        continue
                    hist = [self._inp(times[j], prev[j]) for j in range(n)
                            if times[j] < times[i] and types[j] in srcs]
                    if hist:
                        total = total + self._head(name, l, kq, self._inp(times[i], prev[i]), hist)
                        used = True
                cur.append(prev[i] + np.tanh(total) if used else prev[i].copy())
            layers.append(cur)
        return layers

    def query_layers(self, times, types, e, t):
        """Stack used for the intensity of ``e`` at ``t`` (sees events strictly before ``t``)."""
        keep = [j for j in range(len(times)) if times[j] < t]
        times = [times[j] for j in keep]
        types = [types[j] for j in keep]
        ev = self.event_layers(times, types)
        if self.coarse is None:
            x = self.P["type_emb"][self.types.index(e)].copy()
        else:
            x = self.P["coarse_emb"][self.class_of[e]].copy()
        stack = [x]
        for l in range(1, self.L + 1):
            total = np.zeros(self.D)
            used = False
            for name, heads, srcs, kq in self.rules:
                if e not in heads:
                    continue
                hist = [self._inp(times[j], ev[l - 1][j]) for j in range(len(times)) if types[j] in srcs]
                if hist:
                    total = total + self._head(name, l, kq, self._inp(t, x), hist)
                    used = True
            x = x + np.tanh(total) if used else x.copy()
            stack.append(x)
        return stack

    def intensity(self, times, types, e, t):
        k = self.types.index(e)
        top = self.query_layers(times, types, e, t)[-1]
        z = float(self.P["w"][k] @ np.concatenate([[1.0], top]))
        tau = softplus(float(self.P["tau_raw"][k]), 1.0)
        return softplus(z, tau)

    def total_intensity(self, times, types, t):
        return sum(self.intensity(times, types, e, t) for e in self.types)


def integrated_intensity(oracle: FlatOracle, times, types, T):
    """Adaptive quadrature of the total intensity over [0, T), piece by piece between events."""
    from scipy.integrate import quad

    edges = [0.0] + [t for t in times if 0 < t < T] + [T]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            val, _ = quad(lambda u: oracle.total_intensity(times, types, u), a, b, epsabs=1e-11, epsrel=1e-11,
                          limit=200)
            total += val
    return total


# -- Datalog-through-time replay -----------------------------------------------

def _is_var(a):
    return a[:1].isupper() or a[:1] == "_"


def _unify(pat, fact, b):
    if pat[0] != fact[0] or len(pat[1]) != len(fact[1]):
        return None
    b = dict(b)
    for p, v in zip(pat[1], fact[1]):
        if _is_var(p):
            if p in b and b[p] != v:
                return None
            b[p] = v
        elif p != v:
            return None
    return b


def _bindings(body, facts, b):
    if not body:
        yield b, ()
        return
    for f in facts:
        b2 = _unify(body[0], f, b)
        if b2 is not None:
            for b3, rest in _bindings(body[1:], facts, b2):
                yield b3, (f,) + rest


def _ground(atom, b):
    return (atom[0], tuple(b.get(a, a) if _is_var(a) else a for a in atom[1]))


def _plain(a):
    if isinstance(a, str):
        if "(" not in a:
            return (a.strip(), ())
        f, rest = a.split("(", 1)
        return (f.strip(), tuple(x.strip() for x in rest.rstrip(") ").split(",")))
    return (a.functor, tuple(a.args))


class ReplayOracle:
    """Recomputes the database from the initial facts for every query."""

    def __init__(self, program, events):
        self.rules = [(r.kind, _plain(r.head), tuple(_plain(a) for a in r.body), r.name) for r in program.rules]
        self.init = [_plain(f) for f in program.facts]
        self.event_functors = set(program.events)
        self.events = [(_plain(e), float(t)) for e, t in events]

    def closure(self, ext):
        facts = set(ext)
        while True:
            new = set()
            for kind, head, body, _ in self.rules:
                if kind != "deduce":
                    continue
                for b, _ in _bindings(body, sorted(facts), {}):
                    h = _ground(head, b)
                    if h not in facts:
                        new.add(h)
            if not new:
                return facts
            facts |= new

    def extensional_at(self, t):
        ext = {f: [] for f in self.init}
        for ev, s in self.events:
            if not s < t:
                break
            facts = sorted(self.closure(ext))
            adds, removes = {}, set()
            for kind, head, body, name in self.rules:
                if kind == "deduce":
                    continue
                b0 = _unify(body[0], ev, {})
                if b0 is None:
                    continue
                for b, conds in _bindings(body[1:], facts, b0):
                    h = _ground(head, b)
                    if kind == "remove":
                        removes.add(h)
                    else:
                        adds.setdefault(h, set()).add((s, name, ev, conds))
            for h in removes:
                ext.pop(h, None)
            for h, recs in adds.items():
                if h not in removes:
                    ext.setdefault(h, []).extend(recs)
        return ext

    def facts_at(self, t):
        return self.closure(self.extensional_at(t))

    def history_for(self, h, rule, t):
        recs = [r for r in self.extensional_at(t).get(h, []) if r[1] == rule]
        return sorted(((r[2],) + r[3], r[0]) for r in recs)

    def possible_events(self, t):
        return {f for f in self.facts_at(t) if f[0] in self.event_functors}


def random_program(rng: random.Random, max_rules=6, max_constants=5):
    """Text of a random range-restricted DTT program plus its constants and event functors."""
    consts = [f"c{i}" for i in range(rng.randint(1, max_constants))]
    arity = {}
    for f in ("p", "q", "s"):
        arity[f] = rng.randint(0, 2)
    events = ["ev0", "ev1"]
    for f in events:
        arity[f] = rng.randint(0, 2)
    preds = ["p", "q", "s"]
    var_pool = ["X", "Y", "Z"]

    def atom(f, allowed_vars, p_var=0.6):
        args = [rng.choice(allowed_vars) if allowed_vars and rng.random() < p_var else rng.choice(consts)
                for _ in range(arity[f])]
        return f if not args else f"{f}({','.join(args)})"

    def head_atom(f, body_vars):
        return atom(f, sorted(body_vars), 0.7 if body_vars else 0.0)

    def body_vars(atoms):
        out = set()
        for a in atoms:
            if "(" in a:
                out |= {x for x in a[a.index("(") + 1:-1].split(",") if _is_var(x)}
        return out

    lines = [f":event {', '.join(events)}."]
    for _ in range(rng.randint(0, 3)):
        f = rng.choice(preds + events)
        lines.append(atom(f, []) + ".")
    for k in range(rng.randint(1, max_rules)):
        kind = rng.choice(["deduce", "add", "add", "remove"])
        if kind == "deduce":
            body = [atom(rng.choice(preds + events), var_pool) for _ in range(rng.randint(1, 2))]
            head = head_atom(rng.choice(preds + events), body_vars(body))
            lines.append(f"[r{k}] {head} :- {', '.join(body)}.")
        else:
            body = [atom(rng.choice(events), var_pool)]
            body += [atom(rng.choice(preds + events), var_pool) for _ in range(rng.randint(0, 2))]
            head = head_atom(rng.choice(preds + events), body_vars(body))
            bang = "!" if kind == "remove" else ""
            lines.append(f"[r{k}] {bang}{head} <- {', '.join(body)}.")
    return "\n".join(lines) + "\n", consts, events, arity


def random_events(rng: random.Random, consts, events, arity, n_max=20):
    n = rng.randint(0, n_max)
    t = 0.0
    out = []
    for _ in range(n):
        t += rng.choice([0.25, 0.5, 1.0, rng.uniform(0.01, 2.0)])
        f = rng.choice(events)
        args = [rng.choice(consts) for _ in range(arity[f])]
        out.append((f if not args else f"{f}({','.join(args)})", t))
    return out
