"""Parser and pretty-printer for Datalog-through-time programs.

Statements end with ``.``; ``%`` starts a comment.  Forms::

    fact.                         initial (extensional) fact, true from time 0
    [name] h :- g1, ..., gn.      deduce h whenever all g_i hold
    [name] h <- f, g1, ..., gn.   event f adds h when the g_i hold
    [name] !h <- f, g1, ..., gn.  event f removes h when the g_i hold
    :dim functor N.               embedding size of a functor
    :event f1, f2.                functors that name events
    :kq rule N.                   key/query size of an add rule
    :split rule Var.              one copy (own parameters) per value of Var

Identifiers starting with an upper-case letter or ``_`` are variables.
Rule labels default to ``r0, r1, ...`` in order of appearance.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

__all__ = ["Atom", "Rule", "Program", "ParseError", "parse_program", "parse_atom", "format_program",
           "is_variable", "DEDUCE", "ADD", "REMOVE"]

DEDUCE, ADD, REMOVE = "deduce", "add", "remove"
_ARROW = {DEDUCE: ":-", ADD: "<-", REMOVE: "<-"}


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line, self.col = line, col
        super().__init__(f"line {line}, column {col}: {message}" if line else message)


def is_variable(term: str) -> bool:
    return term[:1].isupper() or term[:1] == "_"


@dataclass(frozen=True, order=True)
class Atom:
    functor: str
    args: tuple = ()

    def __str__(self) -> str:
        return self.functor if not self.args else f"{self.functor}({','.join(self.args)})"

    @property
    def arity(self) -> int:
        return len(self.args)

    def variables(self) -> set:
        return {a for a in self.args if is_variable(a)}

    def is_ground(self) -> bool:
        return not self.variables()


@dataclass(frozen=True)
class Rule:
    kind: str
    head: Atom
    body: tuple
    name: str

    @property
    def trigger(self) -> Atom:
        return self.body[0]

    @property
    def conditions(self) -> tuple:
        return self.body[1:] if self.kind != DEDUCE else self.body

    def __str__(self) -> str:
        bang = "!" if self.kind == REMOVE else ""
        return f"[{self.name}] {bang}{self.head} {_ARROW[self.kind]} {', '.join(map(str, self.body))}."


@dataclass
class Program:
    rules: list = field(default_factory=list)
    facts: list = field(default_factory=list)
    dims: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    kq: dict = field(default_factory=dict)
    splits: list = field(default_factory=list)

    def rule(self, name: str) -> Rule:
        for r in self.rules:
            if r.name == name:
                return r
        raise KeyError(name)

    def functors(self) -> dict:
        """functor -> arity for every functor mentioned anywhere."""
        out: dict = {}
        for a in list(self.facts) + [x for r in self.rules for x in (r.head, *r.body)]:
            out.setdefault(a.functor, a.arity)
        for e in self.events:
            out.setdefault(e, None)
        return out

    def constants(self) -> set:
        return {t for a in list(self.facts) + [x for r in self.rules for x in (r.head, *r.body)]
                for t in a.args if not is_variable(t)}

    def __eq__(self, other) -> bool:
        if not isinstance(other, Program):
            return NotImplemented
        return (self.rules == other.rules and self.facts == other.facts and self.dims == other.dims
                and self.events == other.events and self.kq == other.kq and self.splits == other.splits)


_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+|%[^\n]*)
  | (?P<deduce>:-)
  | (?P<add><-)
  | (?P<num>\d+(?:\.\d+)?(?![A-Za-z_]))
  | (?P<ident>[A-Za-z_0-9][A-Za-z0-9_]*)
  | (?P<punct>[!(),.\[\]:])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind if kind != "punct" else m.group(), m.group(), line, pos - line_start + 1))
        for i, ch in enumerate(m.group()):
            if ch == "\n":
                line += 1
                line_start = pos + i + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.fresh = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind: str, what: str | None = None) -> _Tok:
        t = self.next()
        if t.kind != kind:
            found = t.text or "end of input"
            raise ParseError(f"expected {what or kind!r}, found {found!r}", t.line, t.col)
        return t

    def term(self) -> str:
        t = self.next()
        if t.kind not in ("ident", "num"):
            raise ParseError(f"expected a constant or variable, found {t.text or 'end of input'!r}", t.line, t.col)
        if t.text == "_":
            self.fresh += 1
            return f"_{self.fresh}"
        return t.text

    def atom(self) -> Atom:
        t = self.expect("ident", "functor name")
        if is_variable(t.text) or t.text[0].isdigit():
            raise ParseError(f"functor must start with a lower-case letter: {t.text!r}", t.line, t.col)
        args = []
        if self.peek().kind == "(":
            self.next()
            args.append(self.term())
            while self.peek().kind == ",":
                self.next()
                args.append(self.term())
            self.expect(")", ")")
        return Atom(t.text, tuple(args))

    def body(self) -> tuple:
        atoms = [self.atom()]
        while self.peek().kind == ",":
            self.next()
            atoms.append(self.atom())
        return tuple(atoms)


def _int(tok: _Tok) -> int:
    if tok.kind != "num" or "." in tok.text or int(tok.text) < 1:
        raise ParseError(f"expected a positive integer, found {tok.text!r}", tok.line, tok.col)
    return int(tok.text)


def parse_program(text: str) -> Program:
    """Parse program text; raises :class:`ParseError` with line/column on bad input."""
    p = _Parser(text)
    prog = Program()
    names = set()
    pending = []  # (rule fields, label token, start token)
    while p.peek().kind != "eof":
        start = p.peek()
        if start.kind == ":":
            p.next()
            kw = p.expect("ident", "declaration keyword")
            if kw.text == "dim":
                f = p.expect("ident", "functor name").text
                n = _int(p.next())
                if f in prog.dims and prog.dims[f] != n:
                    raise ParseError(f"conflicting :dim for {f!r}", kw.line, kw.col)
                prog.dims[f] = n
            elif kw.text == "event":
                fs = [p.expect("ident", "functor name").text]
                while p.peek().kind == ",":
                    p.next()
                    fs.append(p.expect("ident", "functor name").text)
                for f in fs:
                    if f not in prog.events:
                        prog.events.append(f)
            elif kw.text == "kq":
                r = p.expect("ident", "rule name").text
                prog.kq[r] = _int(p.next())
            elif kw.text == "split":
                r = p.expect("ident", "rule name").text
                v = p.expect("ident", "variable")
                if not is_variable(v.text):
                    raise ParseError(f"expected a variable, found {v.text!r}", v.line, v.col)
                prog.splits.append((r, v.text))
            else:
                raise ParseError(f"unknown declaration :{kw.text}", kw.line, kw.col)
            p.expect(".", ".")
            continue
        label = None
        if start.kind == "[":
            p.next()
            label = p.expect("ident", "rule name")
            p.expect("]", "]")
        negated = False
        if p.peek().kind == "!":
            p.next()
            negated = True
        head = p.atom()
        t = p.next()
        if t.kind == ".":
            if label or negated:
                raise ParseError("facts cannot be labelled or negated", start.line, start.col)
            if not head.is_ground():
                raise ParseError(f"fact {head} contains variables", start.line, start.col)
            if head not in prog.facts:
                prog.facts.append(head)
            continue
        if t.kind == "deduce":
            kind = DEDUCE
            if negated:
                raise ParseError("'!' only applies to '<-' rules", start.line, start.col)
        elif t.kind == "add":
            kind = REMOVE if negated else ADD
        else:
            raise ParseError(f"expected ':-', '<-' or '.', found {t.text or 'end of input'!r}", t.line, t.col)
        body = p.body()
        p.expect(".", ".")
        missing = head.variables() - set().union(*(a.variables() for a in body))
        if missing:
            raise ParseError(f"head variable(s) {', '.join(sorted(missing))} do not appear in the body "
                             f"(range restriction)", start.line, start.col)
        if any(a.startswith("_") for a in head.args):
            raise ParseError("anonymous variable in rule head", start.line, start.col)
        pending.append((kind, head, body, label, start))
    for k, (kind, head, body, label, start) in enumerate(pending):
        name = label.text if label else f"r{k}"
        if name in names:
            at = label or start
            raise ParseError(f"duplicate rule name {name!r}", at.line, at.col)
        names.add(name)
        prog.rules.append(Rule(kind, head, body, name))
    for r, _ in prog.splits:
        if r not in names:
            raise ParseError(f":split names unknown rule {r!r}")
    for r in prog.kq:
        if r not in names:
            raise ParseError(f":kq names unknown rule {r!r}")
    _check_arity(prog)
    return prog


def _check_arity(prog: Program) -> None:
    seen: dict = {}
    for a in list(prog.facts) + [x for r in prog.rules for x in (r.head, *r.body)]:
        if seen.setdefault(a.functor, a.arity) != a.arity:
            raise ParseError(f"functor {a.functor!r} used with arities {seen[a.functor]} and {a.arity}")


def parse_atom(text: str) -> Atom:
    p = _Parser(text)
    a = p.atom()
    p.expect("eof", "end of atom")
    return a


def format_program(prog: Program) -> str:
    """Canonical text; ``parse_program(format_program(p)) == p``."""
    lines = []
    for f, n in prog.dims.items():
        lines.append(f":dim {f} {n}.")
    if prog.events:
        lines.append(f":event {', '.join(prog.events)}.")
    for r, n in prog.kq.items():
        lines.append(f":kq {r} {n}.")
    for r, v in prog.splits:
        lines.append(f":split {r} {v}.")
    lines.extend(f"{a}." for a in prog.facts)
    lines.extend(str(r) for r in prog.rules)
    return "\n".join(lines) + ("\n" if lines else "")
