"""Guarded window formulas: parsing, direct evaluation, pair compilation.

A window definition is a formula over the designated position variables
``xb`` (window begin) and ``xe`` (window end). Quantifiers are guarded by the
window end, so whether ``(ib, ie)`` is a window of ``w`` depends only on
``w[0:ie]``:

    f := [pred](x) | x < y | X(x) | !f | f & f | f | f
       | exists x <= xe . f | exists X <= xe . f

``eval_formula`` and ``windows_bruteforce`` implement the semantics directly
and serve as the ground truth; ``compile_formula_to_pairs`` translates a
formula into a set of deterministic (prefix, window) automaton pairs whose
recognized windows coincide with the brute-force set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

from .errors import ParseError, PreconditionError, CapabilityError
from .theory import (
    Predicate,
    Theory,
    TrackedTheory,
    Valuation,
    combine,
    eval_predicate,
    is_satisfiable,
    lift_to_tracked,
    parse_predicate,
    project_track,
    strip_tracks,
    substitute_track,
)
from . import automata
from .automata import LookbackAutomaton

BEGIN = "xb"
END = "xe"


# ---------------------------------------------------------------------------
# AST


class Formula:
    __slots__ = ()


@dataclass(frozen=True)
class PredAt(Formula):
    predicate: Predicate
    var: str


@dataclass(frozen=True)
class Less(Formula):
    left: str
    right: str


@dataclass(frozen=True)
class InSet(Formula):
    setvar: str
    var: str


@dataclass(frozen=True)
class FNot(Formula):
    child: Formula


@dataclass(frozen=True)
class FAnd(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class FOr(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class ExistsFirst(Formula):
    var: str
    body: Formula


@dataclass(frozen=True)
class ExistsSecond(Formula):
    setvar: str
    body: Formula


def formula_text(f: Formula) -> str:
    if isinstance(f, PredAt):
        return f"[{f.predicate.text()}]({f.var})"
    if isinstance(f, Less):
        return f"{f.left} < {f.right}"
    if isinstance(f, InSet):
        return f"{f.setvar}({f.var})"
    if isinstance(f, FNot):
        return f"!({formula_text(f.child)})"
    if isinstance(f, FAnd):
        return f"({formula_text(f.left)} & {formula_text(f.right)})"
    if isinstance(f, FOr):
        return f"({formula_text(f.left)} | {formula_text(f.right)})"
    if isinstance(f, ExistsFirst):
        return f"exists {f.var} <= xe . {formula_text(f.body)}"
    if isinstance(f, ExistsSecond):
        return f"exists {f.setvar} <= xe . {formula_text(f.body)}"
    raise ParseError(f"unknown formula node {f!r}")


def _is_second_order(name: str) -> bool:
    return name[:1].isupper()


# ---------------------------------------------------------------------------
# Parser


class _FormulaParser:
    def __init__(self, text: str, theory: Theory):
        self.text = text
        self.theory = theory
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self) -> str:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _starts_with(self, s: str) -> bool:
        self._skip_ws()
        return self.text.startswith(s, self.pos)

    def _word(self) -> str:
        self._skip_ws()
        start = self.pos
        while self.pos < len(self.text) and (
            self.text[self.pos].isalnum() or self.text[self.pos] == "_"
        ):
            self.pos += 1
        if start == self.pos:
            raise ParseError("expected an identifier", 1, self.pos)
        return self.text[start:self.pos]

    def _expect(self, s: str):
        self._skip_ws()
        if not self.text.startswith(s, self.pos):
            found = self.text[self.pos : self.pos + len(s)] or "end of input"
            raise ParseError(f"expected {s!r}, found {found!r}", 1, self.pos)
        self.pos += len(s)

    def parse(self) -> Formula:
        node = self._disj({BEGIN, END})
        if self._peek():
            raise ParseError(f"unexpected trailing input {self._peek()!r}", 1, self.pos)
        return node

    def _disj(self, env: set) -> Formula:
        node = self._conj(env)
        while self._peek() == "|":
            self.pos += 1
            node = FOr(node, self._conj(env))
        return node

    def _conj(self, env: set) -> Formula:
        node = self._unary(env)
        while self._peek() == "&":
            self.pos += 1
            node = FAnd(node, self._unary(env))
        return node

    def _unary(self, env: set) -> Formula:
        ch = self._peek()
        if ch == "!":
            self.pos += 1
            return FNot(self._unary(env))
        if ch == "(":
            self.pos += 1
            node = self._disj(env)
            self._expect(")")
            return node
        if self._starts_with("exists"):
            save = self.pos
            word = self._word()
            if word == "exists":
                return self._exists(env)
            self.pos = save
        return self._atom(env)

    def _exists(self, env: set) -> Formula:
        var = self._word()
        if var in (BEGIN, END):
            raise ParseError(
                f"the designated variable {var!r} cannot be quantified", 1, self.pos
            )
        self._skip_ws()
        if not self._starts_with("<="):
            raise ParseError(
                "quantifiers must be guarded: expected '<= xe'", 1, self.pos
            )
        self.pos += 2
        bound = self._word()
        if bound != END:
            raise ParseError(f"quantifier guard must be {END!r}", 1, self.pos)
        self._expect(".")
        body = self._disj(env | {var})
        if _is_second_order(var):
            return ExistsSecond(var, body)
        return ExistsFirst(var, body)

    def _atom(self, env: set) -> Formula:
        ch = self._peek()
        if ch == "[":
            start = self.pos + 1
            end = self.text.find("]", start)
            if end < 0:
                raise ParseError("unclosed predicate block '['", 1, self.pos)
            pred = parse_predicate(self.text[start:end], self.theory)
            self.pos = end + 1
            self._expect("(")
            var = self._word()
            self._check_var(var, env, first_order=True)
            self._expect(")")
            return PredAt(pred, var)
        name = self._word()
        if _is_second_order(name):
            self._check_var(name, env, first_order=False)
            self._expect("(")
            var = self._word()
            self._check_var(var, env, first_order=True)
            self._expect(")")
            return InSet(name, var)
        self._check_var(name, env, first_order=True)
        self._skip_ws()
        if self._starts_with("<="):
            raise ParseError("only strict '<' comparisons between positions", 1, self.pos)
        self._expect("<")
        other = self._word()
        self._check_var(other, env, first_order=True)
        return Less(name, other)

    def _check_var(self, name: str, env: set, first_order: bool):
        if name not in env:
            raise ParseError(f"unknown variable {name!r}", 1, self.pos)
        if first_order and _is_second_order(name):
            raise ParseError(f"{name!r} is a set variable, expected a position", 1, self.pos)
        if not first_order and not _is_second_order(name):
            raise ParseError(f"{name!r} is a position, expected a set variable", 1, self.pos)


def parse_formula(text: str, theory: Theory) -> Formula:
    """Parse a guarded window formula; ``xb``/``xe`` are free, every other
    variable must be introduced by a guarded ``exists``."""
    return _FormulaParser(text, theory).parse()


# ---------------------------------------------------------------------------
# Direct semantics


def eval_formula(
    word: Sequence, f: Formula, assignment: dict, theory: Optional[Theory] = None
) -> bool:
    """Evaluate under an assignment of positions (and position sets).

    First-order values live in ``[k-1, |w|-1]``; a predicate atom at a
    position below ``k`` is false since no full lookback window exists there.
    Quantifiers range over ``[k, |w|-1]`` capped by the window end.
    """
    w = tuple(word)
    k = theory.k if theory is not None else _formula_k(f)

    def check_position(p: int):
        if not k - 1 <= p <= len(w) - 1:
            raise PreconditionError(
                f"position {p} outside the admissible range [{k - 1}, {len(w) - 1}]"
            )

    def go(node: Formula, asg: dict) -> bool:
        if isinstance(node, PredAt):
            p = asg[node.var]
            check_position(p)
            if p < k:
                return False
            return eval_predicate(node.predicate, Valuation(w[p - k : p + 1]))
        if isinstance(node, Less):
            return asg[node.left] < asg[node.right]
        if isinstance(node, InSet):
            return asg[node.var] in asg[node.setvar]
        if isinstance(node, FNot):
            return not go(node.child, asg)
        if isinstance(node, FAnd):
            return go(node.left, asg) and go(node.right, asg)
        if isinstance(node, FOr):
            return go(node.left, asg) or go(node.right, asg)
        if isinstance(node, ExistsFirst):
            hi = min(asg[END], len(w) - 1)
            return any(
                go(node.body, {**asg, node.var: i}) for i in range(k, hi + 1)
            )
        if isinstance(node, ExistsSecond):
            hi = min(asg[END], len(w) - 1)
            positions = range(k, hi + 1)
            for size in range(len(positions) + 1):
                for subset in combinations(positions, size):
                    if go(node.body, {**asg, node.setvar: frozenset(subset)}):
                        return True
            return False
        raise ParseError(f"unknown formula node {node!r}")

    for value in assignment.values():
        if isinstance(value, int):
            check_position(value)
    return go(f, dict(assignment))


def _formula_k(f: Formula) -> int:
    found = _find_theory(f)
    if found is None:
        raise PreconditionError(
            "formula contains no predicate; pass the theory to fix the lookback"
        )
    return found.k


def _find_theory(f: Formula) -> Optional[Theory]:
    if isinstance(f, PredAt):
        return f.predicate.theory
    if isinstance(f, FNot):
        return _find_theory(f.child)
    if isinstance(f, (FAnd, FOr)):
        return _find_theory(f.left) or _find_theory(f.right)
    if isinstance(f, (ExistsFirst, ExistsSecond)):
        return _find_theory(f.body)
    return None


def windows_bruteforce(word: Sequence, f: Formula, theory: Theory) -> set:
    """All pairs ``(ib, ie)`` in ``[k, |w|-1]^2`` with ``ib <= ie`` whose
    prefix ``w[0:ie]`` satisfies the formula; the ground-truth oracle for
    compilation."""
    w = tuple(word)
    k = theory.k
    out = set()
    for ie in range(k, len(w)):
        prefix = w[: ie + 1]
        for ib in range(k, ie + 1):
            if eval_formula(prefix, f, {BEGIN: ib, END: ie}, theory):
                out.add((ib, ie))
    return out


# ---------------------------------------------------------------------------
# Window expressions


@dataclass(frozen=True)
class WindowExpression:
    """A set of deterministic (prefix, window) automaton pairs.

    ``(ib, ie)`` is recognized in ``w`` when some pair's prefix automaton
    accepts ``w[0:ib-1]`` and its window automaton accepts ``w[ib-k:ie]``.
    """

    theory: Theory
    pairs: tuple  # of (LookbackAutomaton, LookbackAutomaton)

    def __post_init__(self):
        for pa, wa in self.pairs:
            if pa.theory != self.theory or wa.theory != self.theory:
                raise PreconditionError("pair theories differ from the expression theory")
            if pa.deterministic is not True or wa.deterministic is not True:
                raise PreconditionError(
                    "window expression pairs must be deterministic "
                    "(determinize them, or assert the flag for evaluation-only theories)"
                )

    @property
    def k(self) -> int:
        return self.theory.k

    def to_json(self) -> list:
        return [
            {"prefix": pa.to_json(), "window": wa.to_json()} for pa, wa in self.pairs
        ]

    def canonical_json(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, data: list, theory: Optional[Theory] = None) -> "WindowExpression":
        pairs = []
        for entry in data:
            loaded = []
            for part in ("prefix", "window"):
                a = LookbackAutomaton.from_json(entry[part])
                if not automata.certify_deterministic(a):
                    raise PreconditionError(f"{part} automaton in JSON is not deterministic")
                loaded.append(
                    LookbackAutomaton(a.theory, a.states, a.initial, a.finals, a.guards, True)
                )
            pairs.append(tuple(loaded))
        if pairs:
            theory = pairs[0][0].theory
        if theory is None:
            raise PreconditionError("an empty window expression needs an explicit theory")
        return cls(theory, tuple(pairs))


# ---------------------------------------------------------------------------
# Compilation to pairs


def _rename_bound(f: Formula, counter: list[int], env: dict) -> tuple[Formula, list]:
    """Alpha-rename bound variables to unique track names; returns the
    renamed formula and the list of fresh names in introduction order."""
    if isinstance(f, PredAt):
        return PredAt(f.predicate, env[f.var]), []
    if isinstance(f, Less):
        return Less(env[f.left], env[f.right]), []
    if isinstance(f, InSet):
        return InSet(env[f.setvar], env[f.var]), []
    if isinstance(f, FNot):
        child, new = _rename_bound(f.child, counter, env)
        return FNot(child), new
    if isinstance(f, (FAnd, FOr)):
        left, nl = _rename_bound(f.left, counter, env)
        right, nr = _rename_bound(f.right, counter, env)
        cls = FAnd if isinstance(f, FAnd) else FOr
        return cls(left, right), nl + nr
    if isinstance(f, (ExistsFirst, ExistsSecond)):
        second = isinstance(f, ExistsSecond)
        old = f.setvar if second else f.var
        fresh = f"{'V' if second else 'v'}{counter[0]}"
        counter[0] += 1
        body, new = _rename_bound(f.body, counter, {**env, old: fresh})
        node = ExistsSecond(fresh, body) if second else ExistsFirst(fresh, body)
        return node, [fresh] + new
    raise ParseError(f"unknown formula node {f!r}")


def _single_pred_automaton(
    tracked: TrackedTheory, guards_desc: list, finals: list, initial: str = "s0"
) -> LookbackAutomaton:
    states = sorted({s for s, _, _ in guards_desc} | {d for _, _, d in guards_desc} | {initial})
    guards = {(s, d): g for s, g, d in guards_desc}
    return LookbackAutomaton(tracked, states, initial, finals, guards)


def _bit(tracked: TrackedTheory, track: int, value: int) -> Predicate:
    return tracked.bit(track, value)


def _atom_pred_at(tracked: TrackedTheory, pred: Predicate, track: int) -> LookbackAutomaton:
    lifted = lift_to_tracked(pred, tracked)
    off = _bit(tracked, track, 0)
    on = _bit(tracked, track, 1)
    return _single_pred_automaton(
        tracked,
        [
            ("s0", off, "s0"),
            ("s0", combine("and", [on, lifted]), "s1"),
            ("s1", off, "s1"),
        ],
        ["s1"],
    )


def _atom_less(tracked: TrackedTheory, ta: int, tb: int) -> LookbackAutomaton:
    a0, a1 = _bit(tracked, ta, 0), _bit(tracked, ta, 1)
    b0, b1 = _bit(tracked, tb, 0), _bit(tracked, tb, 1)
    return _single_pred_automaton(
        tracked,
        [
            ("s0", a0 & b0, "s0"),
            ("s0", a1 & b0, "s1"),
            ("s1", a0 & b0, "s1"),
            ("s1", a0 & b1, "s2"),
            ("s2", a0 & b0, "s2"),
        ],
        ["s2"],
    )


def _atom_less_eq(tracked: TrackedTheory, ta: int, tb: int) -> LookbackAutomaton:
    a0, a1 = _bit(tracked, ta, 0), _bit(tracked, ta, 1)
    b0, b1 = _bit(tracked, tb, 0), _bit(tracked, tb, 1)
    return _single_pred_automaton(
        tracked,
        [
            ("s0", a0 & b0, "s0"),
            ("s0", a1 & b1, "s2"),
            ("s0", a1 & b0, "s1"),
            ("s1", a0 & b0, "s1"),
            ("s1", a0 & b1, "s2"),
            ("s2", a0 & b0, "s2"),
        ],
        ["s2"],
    )


def _atom_in_set(tracked: TrackedTheory, tset: int, tvar: int) -> LookbackAutomaton:
    v0, v1 = _bit(tracked, tvar, 0), _bit(tracked, tvar, 1)
    s1 = _bit(tracked, tset, 1)
    return _single_pred_automaton(
        tracked,
        [("s0", v0, "s0"), ("s0", v1 & s1, "s1"), ("s1", v0, "s1")],
        ["s1"],
    )


def _one_hot(tracked: TrackedTheory, track: int) -> LookbackAutomaton:
    off, on = _bit(tracked, track, 0), _bit(tracked, track, 1)
    return _single_pred_automaton(
        tracked,
        [("s0", off, "s0"), ("s0", on, "s1"), ("s1", off, "s1")],
        ["s1"],
    )


def _members_within(tracked: TrackedTheory, tset: int, tend: int) -> LookbackAutomaton:
    """No set member strictly after the end variable's position."""
    e0, e1 = _bit(tracked, tend, 0), _bit(tracked, tend, 1)
    s0 = _bit(tracked, tset, 0)
    return _single_pred_automaton(
        tracked,
        [("s0", e0, "s0"), ("s0", e1, "s1"), ("s1", e0 & s0, "s1")],
        ["s0", "s1"],
    )


def _project(a: LookbackAutomaton, track: int) -> LookbackAutomaton:
    guards = {key: project_track(g, track) for key, g in a.guards.items()}
    return LookbackAutomaton(a.theory, a.states, a.initial, a.finals, guards)


def _compile_node(f: Formula, tracked: TrackedTheory, track_of: dict) -> LookbackAutomaton:
    if isinstance(f, PredAt):
        return _atom_pred_at(tracked, f.predicate, track_of[f.var])
    if isinstance(f, Less):
        return _atom_less(tracked, track_of[f.left], track_of[f.right])
    if isinstance(f, InSet):
        return _atom_in_set(tracked, track_of[f.setvar], track_of[f.var])
    if isinstance(f, FNot):
        return automata.complement(_compile_node(f.child, tracked, track_of))
    if isinstance(f, FAnd):
        left = _compile_node(f.left, tracked, track_of)
        right = _compile_node(f.right, tracked, track_of)
        return automata.trim(automata.intersect(left, right))
    if isinstance(f, FOr):
        left = _compile_node(f.left, tracked, track_of)
        right = _compile_node(f.right, tracked, track_of)
        return automata.union(left, right)
    if isinstance(f, (ExistsFirst, ExistsSecond)):
        second = isinstance(f, ExistsSecond)
        var = f.setvar if second else f.var
        track = track_of[var]
        body = _compile_node(f.body, tracked, track_of)
        if second:
            guard = _members_within(tracked, track, track_of[END])
        else:
            guard = automata.intersect(
                _atom_less_eq(tracked, track, track_of[END]), _one_hot(tracked, track)
            )
        conjoined = automata.trim(automata.intersect(body, guard))
        return _project(conjoined, track)
    raise ParseError(f"unknown formula node {f!r}")


def compile_formula_to_pairs(f: Formula, theory: Theory) -> WindowExpression:
    """Compile a guarded formula into deterministic (prefix, window) pairs.

    The formula becomes an automaton over the theory extended with one
    boolean track per variable (begin, end, and each quantified variable;
    quantification projects its track away). The automaton is then split at
    every combination of a begin-marked and an end-marked transition into a
    prefix part and a window part, mirrored down to plain letters.
    """
    if not theory.can_decide_sat:
        raise CapabilityError("formula compilation needs a sat-capable theory")
    counter = [0]
    renamed, bound = _rename_bound(f, counter, {BEGIN: BEGIN, END: END})
    names = [BEGIN, END] + bound
    track_of = {name: i for i, name in enumerate(names)}
    tracked = TrackedTheory(theory, len(names))

    top = _compile_node(renamed, tracked, track_of)
    for checker in (
        _one_hot(tracked, track_of[BEGIN]),
        _one_hot(tracked, track_of[END]),
        _atom_less_eq(tracked, track_of[BEGIN], track_of[END]),
    ):
        top = automata.trim(automata.intersect(top, checker))

    # split every stored transition into track-pure variants
    pure = {(0, 0): [], (0, 1): [], (1, 0): [], (1, 1): []}
    for (src, dst), g in top.guards.items():
        for bb in (0, 1):
            for be in (0, 1):
                base = strip_tracks(
                    substitute_track(
                        substitute_track(g, track_of[BEGIN], bb), track_of[END], be
                    ),
                    theory,
                )
                if is_satisfiable(base)[0]:
                    pure[(bb, be)].append((src, dst, base))

    def plain_edges():
        return {(s, d): g for (s, d, g) in pure[(0, 0)]}

    def build_prefix(final_state: str) -> LookbackAutomaton:
        raw = LookbackAutomaton(
            theory, top.states, top.initial, [final_state], plain_edges()
        )
        return automata.determinize(raw)

    def build_window(begin_edge, end_edge) -> LookbackAutomaton:
        states = list(top.states) + ["^in", "^out"]
        guards = plain_edges()
        b_src, b_dst, b_guard = begin_edge
        guards[("^in", b_dst)] = b_guard
        if end_edge is None:  # begin and end on the same letter
            guards = {("^in", "^out"): b_guard}
            states = ["^in", "^out"]
        else:
            e_src, _, e_guard = end_edge
            key = (e_src, "^out")
            guards[key] = combine("or", [guards[key], e_guard]) if key in guards else e_guard
        raw = LookbackAutomaton(theory, states, "^in", ["^out"], guards)
        return automata.determinize(raw)

    def language_nonempty(a: LookbackAutomaton) -> bool:
        return bool(set(automata.trim(a).finals))

    candidates = []
    for tb in pure[(1, 0)]:
        for te in pure[(0, 1)]:
            if te[1] in top.finals:
                candidates.append((tb, te))
    singles = [tt for tt in pure[(1, 1)] if tt[1] in top.finals]

    seen = {}
    for tb, te in candidates:
        pa = build_prefix(tb[0])
        wa = build_window(tb, te)
        if language_nonempty(pa) and language_nonempty(wa):
            seen.setdefault((pa.canonical_json(), wa.canonical_json()), (pa, wa))
    for tt in singles:
        pa = build_prefix(tt[0])
        wa = build_window(tt, None)
        if language_nonempty(pa) and language_nonempty(wa):
            seen.setdefault((pa.canonical_json(), wa.canonical_json()), (pa, wa))

    pairs = tuple(seen[key] for key in sorted(seen))
    return WindowExpression(theory, pairs)
