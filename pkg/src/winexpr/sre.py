"""Symbolic regular expressions: parser, denotational semantics, compilation.

Grammar: predicate blocks ``[ ... ]`` (guard syntax of the theory), ``+`` for
union, ``.`` for concatenation overlapping on the theory's k letters, ``*``
for iteration, and parentheses. A predicate block denotes exactly the words
of length k+1 whose lookback valuation satisfies it; iteration includes the
length-k identity words of the overlap concatenation.

``matches`` is a direct recursive evaluator used as the independent oracle
for ``compile_sre``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

from .errors import ParseError
from .theory import (
    Predicate,
    Theory,
    Valuation,
    eval_predicate,
    parse_predicate,
)
from . import automata
from .automata import LookbackAutomaton


class Sre:
    __slots__ = ()


@dataclass(frozen=True)
class Pred(Sre):
    predicate: Predicate


@dataclass(frozen=True)
class Union_(Sre):
    left: Sre
    right: Sre


@dataclass(frozen=True)
class Concat(Sre):
    left: Sre
    right: Sre


@dataclass(frozen=True)
class Star(Sre):
    inner: Sre


def sre_text(r: Sre) -> str:
    if isinstance(r, Pred):
        return f"[{r.predicate.text()}]"
    if isinstance(r, Union_):
        return f"{sre_text(r.left)} + {sre_text(r.right)}"
    if isinstance(r, Concat):
        left = f"({sre_text(r.left)})" if isinstance(r.left, Union_) else sre_text(r.left)
        right = f"({sre_text(r.right)})" if isinstance(r.right, Union_) else sre_text(r.right)
        return f"{left} . {right}"
    if isinstance(r, Star):
        inner = sre_text(r.inner)
        if isinstance(r.inner, (Union_, Concat)):
            inner = f"({inner})"
        return f"{inner}*"
    raise ParseError(f"unknown expression node {r!r}")


# ---------------------------------------------------------------------------
# Parsing


def _find_block_end(text: str, start: int) -> int:
    # predicate blocks contain no nested ']'
    end = text.find("]", start)
    if end < 0:
        raise ParseError("unclosed predicate block '['", 1, start)
    return end


class _SreParser:
    def __init__(self, text: str, theory: Theory):
        self.text = text
        self.theory = theory
        self.pos = 0

    def _skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self) -> str:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse(self) -> Sre:
        node = self._union()
        if self._peek():
            raise ParseError(f"unexpected input {self._peek()!r}", 1, self.pos)
        return node

    def _union(self) -> Sre:
        node = self._concat()
        while self._peek() == "+":
            self.pos += 1
            node = Union_(node, self._concat())
        return node

    def _concat(self) -> Sre:
        node = self._star()
        while self._peek() == ".":
            self.pos += 1
            node = Concat(node, self._star())
        return node

    def _star(self) -> Sre:
        node = self._atom()
        while self._peek() == "*":
            self.pos += 1
            node = Star(node)
        return node

    def _atom(self) -> Sre:
        ch = self._peek()
        if ch == "[":
            start = self.pos + 1
            end = _find_block_end(self.text, start)
            pred = parse_predicate(self.text[start:end], self.theory)
            self.pos = end + 1
            return Pred(pred)
        if ch == "(":
            self.pos += 1
            node = self._union()
            if self._peek() != ")":
                raise ParseError("expected ')'", 1, self.pos)
            self.pos += 1
            return node
        raise ParseError(
            f"expected '[' or '(', found {ch or 'end of input'!r}", 1, self.pos
        )


def parse_sre(text: str, theory: Theory) -> Sre:
    """Parse expression text; printing with ``sre_text`` round-trips."""
    return _SreParser(text, theory).parse()


# ---------------------------------------------------------------------------
# Denotational semantics (the oracle)


def matches(r: Sre, word: Sequence) -> bool:
    """Direct recursive membership test, independent of compilation.

    A predicate block holds exactly the satisfying words of length k+1; a
    union holds either side; an overlap concatenation holds words splitting
    as u.v.u' with |v| = k and nonempty u, u'; a star holds the length-k
    words plus any finite overlap-chaining of its operand.
    """
    w = tuple(word)

    def k_of(node: Sre) -> int:
        while not isinstance(node, Pred):
            node = node.inner if isinstance(node, Star) else node.left
        return node.predicate.theory.k

    k = k_of(r)

    @lru_cache(maxsize=None)
    def member(node_id: int, lo: int, hi: int) -> bool:
        node = nodes[node_id]
        sub = w[lo:hi]
        if isinstance(node, Pred):
            return len(sub) == k + 1 and eval_predicate(
                node.predicate, Valuation(sub)
            )
        if isinstance(node, Union_):
            return member(ids[id(node.left)], lo, hi) or member(
                ids[id(node.right)], lo, hi
            )
        if isinstance(node, Concat):
            # split sub = u v u' at i = |u|: left takes u v, right takes v u'.
            # u or u' may be empty; that only matters when an operand holds
            # length-k words (a star's identity), matching the compiled form.
            for i in range(0, len(sub) - k + 1):
                if member(ids[id(node.left)], lo, lo + i + k) and member(
                    ids[id(node.right)], lo + i, hi
                ):
                    return True
            return False
        if isinstance(node, Star):
            if len(sub) == k:
                return True
            if member(ids[id(node.inner)], lo, hi):
                return True
            for i in range(1, len(sub) - k):
                if member(ids[id(node.inner)], lo, lo + i + k) and member(
                    node_id, lo + i, hi
                ):
                    return True
            return False
        raise ParseError(f"unknown expression node {node!r}")

    nodes: list[Sre] = []
    ids: dict[int, int] = {}

    def index(node: Sre) -> None:
        if id(node) in ids:
            return
        ids[id(node)] = len(nodes)
        nodes.append(node)
        if isinstance(node, Union_) or isinstance(node, Concat):
            index(node.left)
            index(node.right)
        elif isinstance(node, Star):
            index(node.inner)

    index(r)
    return member(ids[id(r)], 0, len(w))


# ---------------------------------------------------------------------------
# Compilation


def _compile(r: Sre, counter: list[int]) -> LookbackAutomaton:
    if isinstance(r, Pred):
        n = counter[0]
        counter[0] += 1
        theory = r.predicate.theory
        return LookbackAutomaton(
            theory,
            [f"p{n}a", f"p{n}b"],
            f"p{n}a",
            [f"p{n}b"],
            {(f"p{n}a", f"p{n}b"): r.predicate},
        )
    if isinstance(r, Union_):
        return automata.union(_compile(r.left, counter), _compile(r.right, counter))
    if isinstance(r, Concat):
        return automata.concat_k(_compile(r.left, counter), _compile(r.right, counter))
    if isinstance(r, Star):
        inner = _compile(r.inner, counter)
        guards = dict(inner.guards)
        # every final state may restart the expression: copy the initial
        # state's out-guards; the k-letter overlap is re-read via lookback
        for f in inner.finals:
            for dst, g in inner.out_edges(inner.initial):
                key = (f, dst)
                if key in guards:
                    guards[key] = guards[key] | g
                else:
                    guards[key] = g
        finals = set(inner.finals) | {inner.initial}
        return LookbackAutomaton(
            inner.theory, inner.states, inner.initial, finals, guards
        )
    raise ParseError(f"unknown expression node {r!r}")


def compile_sre(r: Sre) -> LookbackAutomaton:
    """Compile to an equivalent lookback automaton (generally
    nondeterministic); agreement with ``matches`` is the correctness
    contract."""
    return _compile(r, [0])
