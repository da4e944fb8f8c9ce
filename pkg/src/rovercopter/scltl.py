"""Syntactically co-safe LTL: parsing, finite-trace evaluation and compilation
to a deterministic, complete automaton over ``2^AP``.

Formulas are kept in negation normal form (negation only on atoms).  The
automaton is built from syntactic derivatives: every state is a residual formula
in canonical form (absorbed disjunctive normal form over non-Boolean
subformulas), the initial state is the formula itself, ``TRUE`` is the
single accepting (absorbing) state and ``FALSE`` the rejecting sink.
"""
from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

DEFAULT_STATE_CAP = 4096


class FormulaError(ValueError):
    """Base class for formula parse errors; ``position`` is a 0-based offset."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class FormulaSyntaxError(FormulaError):
    pass


class NegationError(FormulaError):
    pass


class UnknownAtomError(FormulaError):
    pass


class StateBlowupError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# AST


class Formula:
    __slots__ = ()

    def atoms(self) -> frozenset[str]:
        raise NotImplementedError


def _cached_hash(cls):
    # hashing a deep tree on every dict lookup dominates compile time, so the
    # hash is computed once at construction
    names = [f for f in cls.__dataclass_fields__ if f != "_h"]
    init = cls.__init__

    def __init__(self, *args, **kwargs):
        init(self, *args, **kwargs)
        object.__setattr__(self, "_h", hash((cls.__name__,) + tuple(getattr(self, n) for n in names)))

    def __hash__(self):
        return self._h

    cls.__init__ = __init__
    cls.__hash__ = __hash__
    return cls


@_cached_hash
@dataclass(frozen=True, eq=True)
class TrueF(Formula):
    _h: int = field(init=False, repr=False, compare=False, default=0)

    def atoms(self):
        return frozenset()

    def __str__(self):
        return "true"


@_cached_hash
@dataclass(frozen=True, eq=True)
class FalseF(Formula):
    """Only produced by simplification; not part of the surface syntax."""
    _h: int = field(init=False, repr=False, compare=False, default=0)

    def atoms(self):
        return frozenset()

    def __str__(self):
        return "false"


@_cached_hash
@dataclass(frozen=True, eq=True)
class Atom(Formula):
    name: str
    _h: int = field(init=False, repr=False, compare=False, default=0)

    def atoms(self):
        return frozenset([self.name])

    def __str__(self):
        return self.name


@_cached_hash
@dataclass(frozen=True, eq=True)
class NegAtom(Formula):
    name: str
    _h: int = field(init=False, repr=False, compare=False, default=0)

    def atoms(self):
        return frozenset([self.name])

    def __str__(self):
        return "!" + self.name


@_cached_hash
@dataclass(frozen=True, eq=True)
class And(Formula):
    """Conjunction; the parser builds binary nodes, canonical form is n-ary."""
    args: tuple
    _h: int = field(init=False, repr=False, compare=False, default=0)

    def atoms(self):
        return frozenset().union(*(a.atoms() for a in self.args))

    def __str__(self):
        return "(" + " & ".join(str(a) for a in self.args) + ")"


@_cached_hash
@dataclass(frozen=True, eq=True)
class Or(Formula):
    args: tuple
    _h: int = field(init=False, repr=False, compare=False, default=0)

    def atoms(self):
        return frozenset().union(*(a.atoms() for a in self.args))

    def __str__(self):
        return "(" + " | ".join(str(a) for a in self.args) + ")"


@_cached_hash
@dataclass(frozen=True, eq=True)
class Next(Formula):
    sub: Formula
    _h: int = field(init=False, repr=False, compare=False, default=0)

    def atoms(self):
        return self.sub.atoms()

    def __str__(self):
        return f"X {_wrap(self.sub)}"


@_cached_hash
@dataclass(frozen=True, eq=True)
class Until(Formula):
    lhs: Formula
    rhs: Formula
    _h: int = field(init=False, repr=False, compare=False, default=0)

    def atoms(self):
        return self.lhs.atoms() | self.rhs.atoms()

    def __str__(self):
        return f"({_wrap(self.lhs)} U {_wrap(self.rhs)})"


def _wrap(f: Formula) -> str:
    s = str(f)
    if isinstance(f, Next):
        return "(" + s + ")"
    return s


TRUE = TrueF()
FALSE = FalseF()


def conj(*args: Formula) -> And:
    return And(tuple(args))


def disj(*args: Formula) -> Or:
    return Or(tuple(args))


def eventually(sub: Formula) -> Until:
    return Until(TRUE, sub)


# ---------------------------------------------------------------------------
# Parser

_TOKEN_RE = re.compile(r"\s*(?:(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[!&|()]))")
_KEYWORDS = {"X", "U", "F", "true"}


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise FormulaSyntaxError(f"unexpected character {text[bad]!r}", bad)
        tok = m.group("ident") or m.group("op")
        tokens.append((tok, m.start(m.lastgroup)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str, ap: Sequence[str]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.ap = set(ap)
        self.end = len(text)

    def peek(self):
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def pos(self):
        return self.tokens[self.i][1] if self.i < len(self.tokens) else self.end

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, tok):
        if self.peek() != tok:
            found = self.peek() or "end of input"
            raise FormulaSyntaxError(f"expected {tok!r}, found {found!r}", self.pos())
        self.take()

    def parse(self) -> Formula:
        f = self.parse_or()
        if self.peek() is not None:
            raise FormulaSyntaxError(f"unexpected token {self.peek()!r}", self.pos())
        return f

    def parse_or(self):
        f = self.parse_and()
        while self.peek() == "|":
            self.take()
            f = Or((f, self.parse_and()))
        return f

    def parse_and(self):
        f = self.parse_until()
        while self.peek() == "&":
            self.take()
            f = And((f, self.parse_until()))
        return f

    def parse_until(self):
        lhs = self.parse_unary()
        if self.peek() == "U":
            self.take()
            return Until(lhs, self.parse_until())
        return lhs

    def parse_unary(self):
        tok = self.peek()
        if tok == "!":
            start = self.pos()
            self.take()
            sub = self.parse_unary()
            if not isinstance(sub, Atom):
                raise NegationError("negation is only allowed directly on atomic propositions", start)
            return NegAtom(sub.name)
        if tok == "X":
            self.take()
            return Next(self.parse_unary())
        if tok == "F":
            self.take()
            return Until(TRUE, self.parse_unary())
        return self.parse_primary()

    def parse_primary(self):
        tok = self.peek()
        if tok is None:
            raise FormulaSyntaxError("unexpected end of input", self.pos())
        if tok == "(":
            self.take()
            f = self.parse_or()
            self.expect(")")
            return f
        if tok == "true":
            self.take()
            return TRUE
        if tok in _KEYWORDS or not re.match(r"[A-Za-z_]", tok):
            raise FormulaSyntaxError(f"unexpected token {tok!r}", self.pos())
        start = self.pos()
        self.take()
        if tok not in self.ap:
            raise UnknownAtomError(f"atomic proposition {tok!r} is not declared", start)
        return Atom(tok)


def parse_formula(text: str, ap: Sequence[str]) -> Formula:
    """Parse ASCII scLTL text (``true ! & | X U F`` and parentheses)."""
    if not text or not text.strip():
        raise FormulaSyntaxError("empty formula", 0)
    ap = list(ap)
    if not ap or len(set(ap)) != len(ap):
        raise ValueError("atomic proposition list must be nonempty with unique names")
    bad = [a for a in ap if a in _KEYWORDS or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", a)]
    if bad:
        raise ValueError(f"invalid atomic proposition names: {bad}")
    return _Parser(text, ap).parse()


# ---------------------------------------------------------------------------
# Finite-trace semantics (independent of the automaton construction)


def good_prefix_oracle(formula: Formula, word: Sequence[Iterable[str]]) -> bool:
    """Evaluate ``formula`` at position 0 of the finite ``word``.

    Strong finite-trace semantics.  Position ``len(word)`` (one past the last
    letter) is a valid evaluation point at which only ``true`` holds, so
    ``X true`` is satisfied by any single-letter word.
    """
    letters = [frozenset(w) for w in word]
    n = len(letters)
    memo: dict = {}

    def holds(f: Formula, i: int) -> bool:
        key = (f, i)
        if key in memo:
            return memo[key]
        if isinstance(f, TrueF):
            r = True
        elif isinstance(f, FalseF):
            r = False
        elif isinstance(f, Atom):
            r = i < n and f.name in letters[i]
        elif isinstance(f, NegAtom):
            r = i < n and f.name not in letters[i]
        elif isinstance(f, And):
            r = all(holds(a, i) for a in f.args)
        elif isinstance(f, Or):
            r = any(holds(a, i) for a in f.args)
        elif isinstance(f, Next):
            r = i < n and holds(f.sub, i + 1)
        elif isinstance(f, Until):
            r = False
            for j in range(i, n + 1):
                if holds(f.rhs, j):
                    r = True
                    break
                if j == n or not holds(f.lhs, j):
                    break
        else:
            raise TypeError(f"not a formula: {f!r}")
        memo[key] = r
        return r

    return holds(formula, 0)


# ---------------------------------------------------------------------------
# Canonical form and derivatives

_RANK = {TrueF: 0, FalseF: 1, Atom: 2, NegAtom: 3, Next: 4, Until: 5, And: 6, Or: 7}


@lru_cache(maxsize=1 << 16)
def _key(f: Formula) -> tuple:
    t = type(f)
    if t is Atom or t is NegAtom:
        return (_RANK[t], f.name)
    if t is Next:
        return (_RANK[t], _key(f.sub))
    if t is Until:
        return (_RANK[t], _key(f.lhs), _key(f.rhs))
    if t is And or t is Or:
        return (_RANK[t], len(f.args)) + tuple(_key(a) for a in f.args)
    return (_RANK[t],)


def _junction(kind, args) -> Formula:
    """Flatten, fold constants, dedupe, absorb and sort an n-ary and/or."""
    unit, zero = (TRUE, FALSE) if kind is And else (FALSE, TRUE)
    dual = Or if kind is And else And
    flat = []
    for a in args:
        if type(a) is kind:
            flat.extend(a.args)
        else:
            flat.append(a)
    out = set()
    for a in flat:
        if a == zero:
            return zero
        if a != unit:
            out.add(a)
    # absorption: p & (p | q) == p, p | (p & q) == p
    if len(out) > 1:
        drop = set()
        for a in out:
            if type(a) is dual and any(b in out for b in a.args):
                drop.add(a)
        # subset absorption between duals: (p|q) & (p|q|r) == (p|q)
        duals = [a for a in out if type(a) is dual and a not in drop]
        for a in duals:
            sa = set(a.args)
            for b in duals:
                if b is not a and b not in drop and set(b.args) < sa:
                    drop.add(a)
                    break
        out -= drop
    if not out:
        return unit
    if len(out) == 1:
        return next(iter(out))
    return kind(tuple(sorted(out, key=_key)))


def _dnf(f: Formula) -> frozenset:
    """Disjunctive normal form as a set of clauses; a clause is a frozenset
    of canonical non-junction formulas.  Clauses that strictly contain
    another clause are absorbed."""
    t = type(f)
    if t is Or:
        clauses = set()
        for a in f.args:
            clauses |= _dnf(a)
    elif t is And:
        clauses = {frozenset()}
        for a in f.args:
            part = _dnf(a)
            clauses = {c | d for c in clauses for d in part}
            if not clauses:
                break
    else:
        lit = canonical(f)
        if lit == TRUE:
            return frozenset([frozenset()])
        if lit == FALSE:
            return frozenset()
        return frozenset([frozenset([lit])])
    return frozenset(c for c in clauses if not any(d < c for d in clauses))


def _from_dnf(clauses: frozenset) -> Formula:
    if not clauses:
        return FALSE
    if frozenset() in clauses:
        return TRUE
    terms = []
    for c in clauses:
        lits = sorted(c, key=_key)
        terms.append(lits[0] if len(lits) == 1 else And(tuple(lits)))
    if len(terms) == 1:
        return terms[0]
    return Or(tuple(sorted(terms, key=_key)))


@lru_cache(maxsize=1 << 18)
def canonical(f: Formula) -> Formula:
    """Canonical negation-normal form used as automaton state identity."""
    t = type(f)
    if t is And or t is Or:
        return _from_dnf(_dnf(f))
    if t is Next:
        sub = canonical(f.sub)
        return FALSE if sub == FALSE else Next(sub)
    if t is Until:
        lhs, rhs = canonical(f.lhs), canonical(f.rhs)
        if rhs == TRUE or rhs == FALSE:
            return rhs
        if lhs == FALSE or lhs == rhs:
            return rhs
        return Until(lhs, rhs)
    return f


@lru_cache(maxsize=1 << 18)
def _derive(f: Formula, letter: frozenset) -> Formula:
    # one-step residual: what must hold from the next position on
    t = type(f)
    if t is TrueF or t is FalseF:
        return f
    if t is Atom:
        return TRUE if f.name in letter else FALSE
    if t is NegAtom:
        return FALSE if f.name in letter else TRUE
    if t is And or t is Or:
        return _junction(t, [_derive(a, letter) for a in f.args])
    if t is Next:
        return f.sub
    if t is Until:
        # lhs U rhs == rhs | (lhs & X(lhs U rhs))
        return _junction(Or, [_derive(f.rhs, letter),
                              _junction(And, [_derive(f.lhs, letter), f])])
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# Automaton


@dataclass(frozen=True, eq=False)
class Fsa:
    """Deterministic complete automaton over bitmask-encoded ``2^AP``.

    Bit ``i`` of a symbol is set iff ``ap[i]`` is in the letter.  ``delta`` has
    shape ``(n_states, 2**len(ap))``.
    """
    ap: tuple[str, ...]
    states: tuple[Formula, ...]
    q0: int
    accepting: frozenset[int]
    delta: np.ndarray

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_symbols(self) -> int:
        return 1 << len(self.ap)

    @property
    def sink(self) -> int | None:
        for q, f in enumerate(self.states):
            if f == FALSE:
                return q
        return None

    def encode(self, letter: Iterable[str]) -> int:
        mask = 0
        for name in letter:
            mask |= 1 << self.ap.index(name)
        return mask

    def decode(self, mask: int) -> frozenset[str]:
        return frozenset(a for i, a in enumerate(self.ap) if mask >> i & 1)

    def step(self, q: int, letter) -> int:
        if not isinstance(letter, (int, np.integer)):
            letter = self.encode(letter)
        return int(self.delta[q, letter])

    def post(self, q: int) -> list[int]:
        return sorted(set(int(v) for v in self.delta[q]))

    def run(self, word) -> list[int]:
        """State sequence q0, q1, ..., q_n for an n-letter word."""
        qs = [self.q0]
        for letter in word:
            qs.append(self.step(qs[-1], letter))
        return qs

    def accepts(self, word) -> bool:
        """True iff the run visits an accepting state (prefix semantics)."""
        return any(q in self.accepting for q in self.run(word))

    def to_json(self) -> dict:
        return {
            "atomic_props": list(self.ap),
            "states": [{"id": q, "formula": str(f)} for q, f in enumerate(self.states)],
            "q0": self.q0,
            "accepting": sorted(self.accepting),
            "transitions": [
                {"from": q, "symbol": s, "to": int(self.delta[q, s])}
                for q in range(self.n_states) for s in range(self.n_symbols)
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Fsa":
        ap = tuple(data["atomic_props"])
        n = len(data["states"])
        delta = np.full((n, 1 << len(ap)), -1, dtype=np.int64)
        for t in data["transitions"]:
            delta[t["from"], t["symbol"]] = t["to"]
        if (delta < 0).any():
            raise ValueError("transition table is incomplete")
        states = tuple(_FormulaLabel(s.get("formula", str(s["id"]))) for s in data["states"])
        return cls(ap, states, int(data["q0"]), frozenset(data["accepting"]), delta)

    def to_dot(self) -> str:
        lines = ["digraph fsa {", "  rankdir=LR;", '  init [shape=point];']
        for q, f in enumerate(self.states):
            shape = "doublecircle" if q in self.accepting else "circle"
            label = f"q{q}\\n{f}".replace('"', '\\"')
            lines.append(f'  q{q} [shape={shape}, label="{label}"];')
        lines.append(f"  init -> q{self.q0};")
        for q in range(self.n_states):
            for q2 in self.post(q):
                syms = sorted(en_set(self, q, q2))
                text = ", ".join("{" + ",".join(sorted(self.decode(s))) + "}" for s in syms)
                lines.append(f'  q{q} -> q{q2} [label="{text}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class _FormulaLabel(Formula):
    # stand-in for states of an automaton loaded from JSON
    text: str

    def __str__(self):
        return self.text

    def __eq__(self, other):
        if isinstance(other, (TrueF, FalseF)):
            return self.text == str(other)
        return isinstance(other, _FormulaLabel) and other.text == self.text

    def __hash__(self):
        return hash(self.text)


def compile(formula: Formula, ap: Sequence[str], max_states: int = DEFAULT_STATE_CAP) -> Fsa:
    """Translate an scLTL formula into a deterministic complete automaton
    accepting its good prefixes."""
    ap = tuple(ap)
    unknown = formula.atoms() - set(ap)
    if unknown:
        raise UnknownAtomError(f"atomic propositions not declared: {sorted(unknown)}")
    letters = [frozenset(a for i, a in enumerate(ap) if m >> i & 1) for m in range(1 << len(ap))]

    init = canonical(formula)
    states = [init]
    index = {init: 0}
    rows: list[list[int]] = []
    queue = deque([0])
    while queue:
        q = queue.popleft()
        f = states[q]
        row = []
        for letter in letters:
            r = canonical(_derive(f, letter)) if f != TRUE else TRUE
            if r not in index:
                if len(states) >= max_states:
                    raise StateBlowupError(f"automaton exceeds {max_states} states")
                index[r] = len(states)
                states.append(r)
                queue.append(index[r])
            row.append(index[r])
        rows.append((q, row))
    delta = np.zeros((len(states), len(letters)), dtype=np.int64)
    for q, row in rows:
        delta[q] = row
    accepting = frozenset(q for q, f in enumerate(states) if f == TRUE)
    return Fsa(ap, tuple(states), 0, accepting, delta)


def compile_text(text: str, ap: Sequence[str], max_states: int = DEFAULT_STATE_CAP) -> Fsa:
    return compile(parse_formula(text, ap), ap, max_states)


def en_set(fsa: Fsa, q: int, q_next: int) -> frozenset[int]:
    """Symbols (bitmasks) driving ``q`` to ``q_next``; empty if not a successor."""
    return frozenset(int(s) for s in np.flatnonzero(fsa.delta[q] == q_next))


def fsa_to_json_text(fsa: Fsa) -> str:
    return json.dumps(fsa.to_json(), indent=2)
