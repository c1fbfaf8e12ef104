"""The flat attentive neural Hawkes process over a fixed event vocabulary.

Every event type gets a learned layer-0 vector.  Layer ``l`` of an event
``e@t`` adds ``tanh`` of the summed rule heads to layer ``l-1``; a rule
``h <- f`` lets events of a type in ``heads`` attend to past events of a
type in ``sources``.  The default single universal rule lets everything see
everything.

Possible events may be embedded through a coarse class (one stack shared by
several types); the intensity still uses the type's own ``w_e`` and ``tau_e``.
Actual past events are always embedded with their own type.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import attend, feed_forward, layer_embed, layer_norm
from .autodiff import Tensor
from .base import Conditional, EventModel
from .events import EventSequence
from .intervals import Box, affine, dot_rows, normalized_attention
from .params import ParameterStore, inverse_softplus, type_embedding, uniform_matrix
from .rng import stream
from .timeenc import TimeEncodingConfig, embed_times

__all__ = ["FlatRule", "AnhpModel", "FlatConditional", "ConfigError", "BOUND_MARGIN"]

# relative slack on certificates, absorbing rounding in the forward pass
BOUND_MARGIN = 1e-12


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FlatRule:
    """``heads <- sources``; ``None`` on either side means every type."""

    name: str
    heads: tuple | None = None
    sources: tuple | None = None
    kq: int | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "heads": None if self.heads is None else list(self.heads),
                "sources": None if self.sources is None else list(self.sources), "kq": self.kq}

    @classmethod
    def from_dict(cls, d: dict) -> "FlatRule":
        h, s = d.get("heads"), d.get("sources")
        return cls(d["name"], None if h is None else tuple(h), None if s is None else tuple(s), d.get("kq"))


def _ones(n: int) -> np.ndarray:
    return np.ones((n, 1))


class _Encoding:
    """Per-layer embeddings of the actual events of one sequence, plus the
    rule-specific keys/values they expose to later queries."""

    def __init__(self, times, types, layers, cache):
        self.times = times
        self.types = types
        self.layers = layers      # list of Tensor (N, D), index 0..L
        self.cache = cache        # cache[l][rule] = (src_idx, keys, values) for layer l >= 1


class AnhpModel(EventModel):
    kind = "anhp"

    def __init__(self, types, dim: int, time_config: TimeEncodingConfig, layers: int = 1,
                 rules=None, coarse=None, use_layer_norm: bool = False, use_ffn: bool = False,
                 ffn_hidden: int | None = None, seed: int = 0):
        self.types = [str(e) for e in types]
        if len(set(self.types)) != len(self.types) or not self.types:
            raise ConfigError("event vocabulary must be nonempty with distinct names")
        if dim < 1 or layers < 0:
            raise ConfigError("need dim >= 1 and layers >= 0")
        self.type_index = {e: i for i, e in enumerate(self.types)}
        self.D = int(dim)
        self.L = int(layers)
        self.time_config = time_config
        self.Dt = time_config.D
        self.rules = list(rules) if rules is not None else [FlatRule("all")]
        self.use_layer_norm = bool(use_layer_norm)
        self.use_ffn = bool(use_ffn)
        self.ffn_hidden = int(ffn_hidden or 2 * self.D)
        self.seed = int(seed)
        self._check_rules()
        self._set_coarse(coarse)
        self.params = ParameterStore()
        self._init_params(stream(seed, "init"))

    # -- configuration ---------------------------------------------------

    def _check_rules(self):
        names = [r.name for r in self.rules]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate rule names in {names}")
        E = len(self.types)
        self._rule_heads, self._rule_sources = [], []
        for r in self.rules:
            for side in (r.heads, r.sources):
                for e in side or ():
                    if e not in self.type_index:
                        raise ConfigError(f"rule {r.name!r} mentions unknown type {e!r}")
            heads = np.ones(E, bool) if r.heads is None else np.isin(np.arange(E), [self.type_index[e] for e in r.heads])
            srcs = np.ones(E, bool) if r.sources is None else np.isin(np.arange(E), [self.type_index[e] for e in r.sources])
            self._rule_heads.append(heads)
            self._rule_sources.append(srcs)

    def _visible_rules(self, type_id: int) -> tuple:
        return tuple(k for k, h in enumerate(self._rule_heads) if h[type_id])

    def _set_coarse(self, coarse):
        """``None``: each type is its own class; ``"single"``: one class; or a type -> class dict."""
        E = len(self.types)
        self.coarse_spec = coarse
        if coarse is None:
            self.class_names = list(self.types)
            self.class_of = np.arange(E)
        else:
            mapping = {e: "all" for e in self.types} if coarse == "single" else dict(coarse)
            missing = [e for e in self.types if e not in mapping]
            if missing:
                raise ConfigError(f"coarse map does not cover types {missing}")
            self.class_names = sorted(set(map(str, mapping.values())))
            idx = {c: i for i, c in enumerate(self.class_names)}
            self.class_of = np.array([idx[str(mapping[e])] for e in self.types])
        self.class_members = [np.nonzero(self.class_of == c)[0] for c in range(len(self.class_names))]
        self.class_rules = []
        for c, members in enumerate(self.class_members):
            vis = {self._visible_rules(int(e)) for e in members}
            if len(vis) > 1:
                raise ConfigError(f"coarse class {self.class_names[c]!r} groups types that attend "
                                  f"under different rules")
            self.class_rules.append(vis.pop())

    def _kq(self, rule: FlatRule) -> int:
        return int(rule.kq or self.D)

    def _init_params(self, rng):
        p, D, E = self.params, self.D, len(self.types)
        p.add("type_emb", np.stack([type_embedding(rng, D) for _ in range(E)]))
        if self.coarse_spec is not None:
            p.add("coarse_emb", np.stack([type_embedding(rng, D) for _ in self.class_names]))
        fan = 1 + self.Dt + D
        for l in range(1, self.L + 1):
            for r in self.rules:
                kq = self._kq(r)
                p.add(f"layer{l}/{r.name}/V", uniform_matrix(rng, D, fan))
                p.add(f"layer{l}/{r.name}/K", uniform_matrix(rng, kq, fan))
                p.add(f"layer{l}/{r.name}/Q", uniform_matrix(rng, kq, fan))
            if self.use_layer_norm:
                p.add(f"layer{l}/ln1/gain", np.ones(D))
                p.add(f"layer{l}/ln1/bias", np.zeros(D))
            if self.use_ffn:
                H = self.ffn_hidden
                p.add(f"layer{l}/ffn/W1", uniform_matrix(rng, H, D))
                p.add(f"layer{l}/ffn/b1", np.zeros(H))
                p.add(f"layer{l}/ffn/W2", uniform_matrix(rng, D, H))
                p.add(f"layer{l}/ffn/b2", np.zeros(D))
                if self.use_layer_norm:
                    p.add(f"layer{l}/ln2/gain", np.ones(D))
                    p.add(f"layer{l}/ln2/bias", np.zeros(D))
        p.add("w", uniform_matrix(rng, E, 1 + D))
        p.add("tau_raw", np.full(E, inverse_softplus(1.0)))

    def config(self) -> dict:
        return {"types": self.types, "dim": self.D, "layers": self.L, "time": self.time_config.to_dict(),
                "rules": [r.to_dict() for r in self.rules], "coarse": self.coarse_spec,
                "layer_norm": self.use_layer_norm, "ffn": self.use_ffn, "ffn_hidden": self.ffn_hidden,
                "seed": self.seed}

    @classmethod
    def from_config(cls, cfg: dict) -> "AnhpModel":
        return cls(cfg["types"], cfg["dim"], TimeEncodingConfig.from_dict(cfg["time"]), cfg["layers"],
                   rules=[FlatRule.from_dict(r) for r in cfg["rules"]], coarse=cfg.get("coarse"),
                   use_layer_norm=cfg.get("layer_norm", False), use_ffn=cfg.get("ffn", False),
                   ffn_hidden=cfg.get("ffn_hidden"), seed=cfg.get("seed", 0))

    def validate_sequence(self, seq: EventSequence, index: int | None = None) -> None:
        seq.validate(vocabulary=self.type_index, index=index)

    # -- per-layer pieces --------------------------------------------------

    def tau(self) -> Tensor:
        return ad.softplus(self.params["tau_raw"], 1.0)

    def _sublayers(self, x: Tensor, l: int) -> Tensor:
        p = self.params
        if self.use_layer_norm:
            x = layer_norm(x, p[f"layer{l}/ln1/gain"], p[f"layer{l}/ln1/bias"])
        if self.use_ffn:
            x = ad.add(x, feed_forward(x, p[f"layer{l}/ffn/W1"], p[f"layer{l}/ffn/b1"],
                                       p[f"layer{l}/ffn/W2"], p[f"layer{l}/ffn/b2"]))
            if self.use_layer_norm:
                x = layer_norm(x, p[f"layer{l}/ln2/gain"], p[f"layer{l}/ln2/bias"])
        return x

    def _inputs(self, temb: np.ndarray, x: Tensor) -> Tensor:
        return ad.concat([_ones(temb.shape[0]), temb, x], axis=1)

    def _project(self, inp: Tensor, name: str) -> Tensor:
        return ad.matmul(inp, ad.transpose(self.params[name]))

    # -- actual events -----------------------------------------------------

    def encode(self, times, types) -> _Encoding:
        """Embeddings of all given events at their own times (each sees only earlier ones)."""
        times = np.asarray(times, dtype=np.float64)
        tid = np.array([self.type_index[e] for e in types], dtype=np.intp)
        N = len(tid)
        temb = embed_times(times, self.time_config)
        x = ad.take(self.params["type_emb"], tid) if N else Tensor(np.zeros((0, self.D)))
        layers, cache = [x], [None]
        for l in range(1, self.L + 1):
            inp = self._inputs(temb, x)
            per_rule, heads = {}, []
            for k, r in enumerate(self.rules):
                src = np.nonzero(self._rule_sources[k][tid])[0]
                hd = np.nonzero(self._rule_heads[k][tid])[0]
                s_inp = inp if len(src) == N else ad.take(inp, src)
                keys = self._project(s_inp, f"layer{l}/{r.name}/K")
                vals = self._project(s_inp, f"layer{l}/{r.name}/V")
                per_rule[r.name] = (src, keys, vals)
                if len(hd) == 0 or len(src) == 0:
                    continue
                h_inp = inp if len(hd) == N else ad.take(inp, hd)
                q = self._project(h_inp, f"layer{l}/{r.name}/Q")
                mask = times[src][None, :] < times[hd][:, None]
                out = attend(q, keys, vals, mask)
                heads.append(out if len(hd) == N else ad.scatter(out, hd, N))
            x = self._sublayers(layer_embed(x, heads), l)
            layers.append(x)
            cache.append(per_rule)
        return _Encoding(times, list(types), layers, cache)

    # -- hypothetical (query) events --------------------------------------

    def embed_queries(self, enc: _Encoding, qtimes, qclasses, n_prefix=None) -> list[Tensor]:
        """Layer stacks of class embeddings at query times.

        Row ``i`` describes class ``qclasses[i]`` at ``qtimes[i]`` and sees
        source events ``j`` with ``t_j < qtimes[i]`` and ``j < n_prefix[i]``.
        """
        qtimes = np.asarray(qtimes, dtype=np.float64)
        qclasses = np.asarray(qclasses, dtype=np.intp)
        Nq = len(qtimes)
        n_prefix = np.full(Nq, len(enc.times)) if n_prefix is None else np.broadcast_to(n_prefix, (Nq,))
        emb = self.params["type_emb"] if self.coarse_spec is None else self.params["coarse_emb"]
        temb = embed_times(qtimes, self.time_config)
        x = ad.take(emb, qclasses) if Nq else Tensor(np.zeros((0, self.D)))
        stack = [x]
        for l in range(1, self.L + 1):
            inp = self._inputs(temb, x)
            heads = []
            for k, r in enumerate(self.rules):
                rows = np.nonzero([k in self.class_rules[c] for c in qclasses])[0] if Nq else np.zeros(0, np.intp)
                src, keys, vals = enc.cache[l][r.name]
                if len(rows) == 0 or len(src) == 0:
                    continue
                mask = (enc.times[src][None, :] < qtimes[rows][:, None]) & (src[None, :] < n_prefix[rows][:, None])
                if not mask.any():
                    continue
                h_inp = inp if len(rows) == Nq else ad.take(inp, rows)
                q = self._project(h_inp, f"layer{l}/{r.name}/Q")
                out = attend(q, keys, vals, mask)
                heads.append(out if len(rows) == Nq else ad.scatter(out, rows, Nq))
            x = self._sublayers(layer_embed(x, heads), l)
            stack.append(x)
        return stack

    def _pair_intensities(self, top: Tensor, rows, type_ids) -> Tensor:
        """lambda for (query row, type) pairs from the top-layer query embeddings."""
        E = len(self.types)
        n = top.shape[0]
        z = ad.matmul(ad.concat([_ones(n), top], axis=1), ad.transpose(self.params["w"]))
        flat = ad.reshape(z, (n * E,))
        pick = np.asarray(rows, dtype=np.intp) * E + np.asarray(type_ids, dtype=np.intp)
        return ad.softplus(ad.take(flat, pick), ad.take(self.tau(), type_ids))

    # -- EventModel interface ----------------------------------------------

    def log_likelihood(self, seq: EventSequence, mc_times, downsample=None) -> Tensor:
        mc_times = np.asarray(mc_times, dtype=np.float64)
        E, n_mc = len(self.types), len(mc_times)
        tid = np.array([self.type_index[e] for e in seq.types], dtype=np.intp)
        N = len(tid)
        enc = self.encode(seq.times, seq.types)
        # MC pairs (sample j, type e), optionally downsampled
        if downsample is None:
            pj = np.repeat(np.arange(n_mc), E)
            pe = np.tile(np.arange(E), n_mc)
            scale = 1.0
        else:
            J, rng = downsample
            if not 1 <= J <= E:
                raise ValueError(f"downsample count must be in [1, {E}], got {J}")
            pe = np.concatenate([rng.choice(E, size=J, replace=False) for _ in range(n_mc)]) if n_mc else np.zeros(0, np.intp)
            pj = np.repeat(np.arange(n_mc), J)
            scale = E / J
        # deduplicated query rows: one per (time, class)
        pc = self.class_of[pe]
        key = pj * len(self.class_names) + pc
        ukey, mc_row = np.unique(key, return_inverse=True)
        q_times = mc_times[ukey // len(self.class_names)]
        q_classes = ukey % len(self.class_names)
        if self.coarse_spec is None:
            ev_rows = None
        else:
            ev_rows = np.arange(len(ukey), len(ukey) + N)
            q_times = np.concatenate([q_times, seq.times])
            q_classes = np.concatenate([q_classes, self.class_of[tid]])
        total = Tensor(0.0)
        if len(q_times):
            top = self.embed_queries(enc, q_times, q_classes)[-1]
        if N:
            if ev_rows is None:
                lam_ev = self._pair_intensities(enc.layers[-1], np.arange(N), tid)
            else:
                lam_ev = self._pair_intensities(top, ev_rows, tid)
            total = ad.sum(ad.log(lam_ev))
        if n_mc:
            lam_mc = self._pair_intensities(top, mc_row, pe)
            integral = ad.mul(ad.sum(lam_mc), seq.T * scale / n_mc)
            total = ad.sub(total, integral)
        return total

    def event_intensities(self, seq: EventSequence):
        E = len(self.types)
        N = len(seq)
        if N == 0:
            return np.zeros(0), np.zeros(0)
        tid = np.array([self.type_index[e] for e in seq.types], dtype=np.intp)
        enc = self.encode(seq.times, seq.types)
        qc = np.repeat(np.arange(len(self.class_names)), N)
        qt = np.tile(seq.times, len(self.class_names))
        top = self.embed_queries(enc, qt, qc)[-1]
        rows = self.class_of[np.arange(E)][None, :] * N + np.arange(N)[:, None]
        lam = self._pair_intensities(top, rows.reshape(-1), np.tile(np.arange(E), N)).value.reshape(N, E)
        return lam[np.arange(N), tid], lam.sum(axis=1)

    def conditional(self, seq: EventSequence, n_prefix: int | None = None) -> "FlatConditional":
        n = len(seq) if n_prefix is None else int(n_prefix)
        return FlatConditional(self, seq.times[:n], seq.types[:n])

    # -- stacks for inspection ---------------------------------------------

    def embed_event(self, seq: EventSequence, i: int) -> list[np.ndarray]:
        """Layer stack of the ``i``-th actual event of ``seq``."""
        enc = self.encode(seq.times[:i + 1], seq.types[:i + 1])
        return [x.value[i].copy() for x in enc.layers]

    def coarse_embed(self, event_type: str, t: float, seq: EventSequence) -> list[np.ndarray]:
        """Layer stack used for the intensity of ``event_type`` at ``t`` given events before ``t``."""
        n = int(np.searchsorted(seq.times, t, side="left"))
        enc = self.encode(seq.times[:n], seq.types[:n])
        c = self.class_of[self.type_index[event_type]]
        return [x.value[0].copy() for x in self.embed_queries(enc, [t], [c])]


class FlatConditional(Conditional):
    def __init__(self, model: AnhpModel, times, types):
        self.model = model
        self.enc = model.encode(times, types)
        self.t0 = float(times[-1]) if len(times) else 0.0
        self.types = list(model.types)
        self._bounds = None

    def intensities(self, times) -> np.ndarray:
        m = self.model
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        n, C, E = len(times), len(m.class_names), len(m.types)
        qt = np.tile(times, C)
        qc = np.repeat(np.arange(C), n)
        top = m.embed_queries(self.enc, qt, qc)[-1]
        rows = m.class_of[None, :] * n + np.arange(n)[:, None]
        lam = m._pair_intensities(top, rows.reshape(-1), np.tile(np.arange(E), n))
        return lam.value.reshape(n, E)

    def upper_bounds(self) -> np.ndarray:
        if self._bounds is None:
            self._bounds = flat_upper_bounds(self.model, self.enc, self.t0)
        return self._bounds


def _layer_norm_box(gain: np.ndarray, bias: np.ndarray) -> Box:
    # standardised entries of a D-vector satisfy |z_d| <= sqrt(D - 1)
    D = gain.shape[0]
    r = np.abs(gain) * math.sqrt(max(D - 1, 0))
    return Box(bias - r, bias + r)


def flat_upper_bounds(model: AnhpModel, enc: _Encoding, t0: float) -> np.ndarray:
    """Per-type bounds on ``lambda_e(t)`` valid for every ``t >= t0`` with the encoded history fixed."""
    m, p = model, model.params
    Dt = m.Dt
    tbox = Box(-np.ones(Dt), np.ones(Dt))
    tau = m.tau().value
    w = p["w"].value
    emb = (p["type_emb"] if m.coarse_spec is None else p["coarse_emb"]).value
    out = np.zeros(len(m.types))
    for c in range(len(m.class_names)):
        x = Box(emb[c])
        for l in range(1, m.L + 1):
            inp = Box.concat([Box(np.ones(1)), tbox, x])
            total = None
            for k, r in enumerate(m.rules):
                if k not in m.class_rules[c]:
                    continue
                src, keys, vals = enc.cache[l][r.name]
                if len(src) == 0:
                    continue
                Q = p[f"layer{l}/{r.name}/Q"].value
                A = (keys.value @ Q) / math.sqrt(m._kq(r))
                scores = dot_rows(A, inp)
                # an event exactly at t0 is hidden at t = t0 itself; allow zero weight there
                optional = enc.times[src] >= t0
                head = normalized_attention(scores, vals.value, optional=optional)
                total = head if total is None else total + head
            if total is not None:
                x = x + total.tanh()
            if m.use_layer_norm:
                x = _layer_norm_box(p[f"layer{l}/ln1/gain"].value, p[f"layer{l}/ln1/bias"].value)
            if m.use_ffn:
                h = affine(p[f"layer{l}/ffn/W1"].value, x, p[f"layer{l}/ffn/b1"].value).relu()
                x = x + affine(p[f"layer{l}/ffn/W2"].value, h, p[f"layer{l}/ffn/b2"].value)
                if m.use_layer_norm:
                    x = _layer_norm_box(p[f"layer{l}/ln2/gain"].value, p[f"layer{l}/ln2/bias"].value)
        members = m.class_members[c]
        z = affine(w[members], Box.concat([Box(np.ones(1)), x]))
        out[members] = Box(z.hi).softplus(tau[members]).hi
    return out * (1.0 + BOUND_MARGIN)
