"""Alphabet theories: letters, lookback valuations, guard predicates, satisfiability.

A theory fixes the letter domain and the atom language of guard predicates.
Guards see the current letter ``x0`` plus the ``k`` preceding ones
(``x-1`` .. ``x-k``). Three user-facing kinds are provided:

* ``FiniteTheory``     -- a fixed finite alphabet with membership atoms;
* ``DenseOrderTheory`` -- exact rational letters with order-comparison atoms;
* ``CustomTheory``     -- opaque letters with named, evaluation-only atoms.

``TrackedTheory`` decorates a base theory with hidden boolean tracks and is
internal plumbing for the formula-to-automaton pipeline.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Any, Callable, Iterable, Iterator, Optional, Sequence, Union

from .errors import (
    BudgetExceededError,
    CapabilityError,
    MalformedPredicateError,
    ParseError,
    TheoryMismatchError,
)

Letter = Any

DEFAULT_MINTERM_BUDGET = 1 << 16


# ---------------------------------------------------------------------------
# Valuations


@dataclass(frozen=True)
class Valuation:
    """Letters assigned to the k+1 lookback variables x_-k .. x0.

    Built from a window of k+1 consecutive letters; ``var(j)`` returns the
    value of ``x_-j``, so ``var(0)`` is the newest letter and ``var(k)`` the
    oldest one in the window.
    """

    letters: tuple

    @property
    def k(self) -> int:
        return len(self.letters) - 1

    def var(self, offset: int) -> Letter:
        if not 0 <= offset <= self.k:
            raise MalformedPredicateError(
                f"variable x-{offset} outside lookback range 0..{self.k}"
            )
        return self.letters[self.k - offset]

    @classmethod
    def from_window(cls, window: Sequence[Letter]) -> "Valuation":
        return cls(tuple(window))


# ---------------------------------------------------------------------------
# Atoms


@dataclass(frozen=True)
class Var:
    offset: int  # x_-offset; 0 is the current letter

    def __str__(self) -> str:
        return f"x{-self.offset}" if self.offset else "x0"


@dataclass(frozen=True)
class Const:
    value: Fraction

    def __str__(self) -> str:
        return str(self.value)


Term = Union[Var, Const]


@dataclass(frozen=True)
class Membership:
    """Finite-theory atom: the letter at ``x_-offset`` lies in a set."""

    offset: int
    letters: frozenset


@dataclass(frozen=True)
class Comparison:
    """Order atom ``lhs op rhs`` with op one of < <= = !=."""

    lhs: Term
    op: str
    rhs: Term


@dataclass(frozen=True)
class TrackBit:
    """Boolean-track atom: bit ``track`` of the letter at ``x_-offset``."""

    track: int
    offset: int
    bit: int


@dataclass(frozen=True)
class CustomAtom:
    """Named evaluation-only atom backed by a callable on valuations."""

    name: str
    fn: Callable[[Valuation], bool] = field(compare=False, repr=False)


AtomPayload = Union[Membership, Comparison, TrackBit, CustomAtom]


# ---------------------------------------------------------------------------
# Predicate AST


class Node:
    __slots__ = ()


@dataclass(frozen=True)
class Top(Node):
    pass


@dataclass(frozen=True)
class Bottom(Node):
    pass


@dataclass(frozen=True)
class Atom(Node):
    atom: AtomPayload


@dataclass(frozen=True)
class Not(Node):
    child: Node


@dataclass(frozen=True)
class And(Node):
    children: tuple


@dataclass(frozen=True)
class Or(Node):
    children: tuple


def _atom_text(atom: AtomPayload) -> str:
    if isinstance(atom, Membership):
        names = ",".join(sorted(_letter_text(l) for l in atom.letters))
        return f"{Var(atom.offset)} in{{{names}}}"
    if isinstance(atom, Comparison):
        return f"{atom.lhs} {atom.op} {atom.rhs}"
    if isinstance(atom, TrackBit):
        return f"@bit{atom.track}[{Var(atom.offset)}]={atom.bit}"
    if isinstance(atom, CustomAtom):
        return atom.name
    raise MalformedPredicateError(f"unknown atom {atom!r}")


def _letter_text(letter: Letter) -> str:
    if isinstance(letter, tuple):
        return "(" + ",".join(_letter_text(p) for p in letter) + ")"
    return str(letter)


def node_text(node: Node) -> str:
    """Canonical text form; ``parse_predicate`` inverts it."""
    if isinstance(node, Top):
        return "true"
    if isinstance(node, Bottom):
        return "false"
    if isinstance(node, Atom):
        return _atom_text(node.atom)
    if isinstance(node, Not):
        inner = node_text(node.child)
        if isinstance(node.child, (And, Or)):
            return f"!({inner})"
        return f"!{inner}"
    if isinstance(node, And):
        parts = [
            f"({node_text(c)})" if isinstance(c, Or) else node_text(c)
            for c in node.children
        ]
        return " && ".join(parts)
    if isinstance(node, Or):
        return " || ".join(node_text(c) for c in node.children)
    raise MalformedPredicateError(f"unknown node {node!r}")


def normalize(node: Node) -> Node:
    """Flatten, deduplicate and sort boolean structure into a canonical form."""
    if isinstance(node, (Top, Bottom, Atom)):
        return node
    if isinstance(node, Not):
        child = normalize(node.child)
        if isinstance(child, Top):
            return Bottom()
        if isinstance(child, Bottom):
            return Top()
        if isinstance(child, Not):
            return child.child
        return Not(child)
    if isinstance(node, (And, Or)):
        is_and = isinstance(node, And)
        absorb, unit = (Bottom, Top) if is_and else (Top, Bottom)
        flat: list[Node] = []
        for raw in node.children:
            child = normalize(raw)
            if isinstance(child, unit):
                continue
            if isinstance(child, absorb):
                return absorb()
            if isinstance(child, And if is_and else Or):
                flat.extend(child.children)
            else:
                flat.append(child)
        unique = {node_text(c): c for c in flat}
        ordered = tuple(unique[t] for t in sorted(unique))
        if not ordered:
            return unit()
        if len(ordered) == 1:
            return ordered[0]
        return And(ordered) if is_and else Or(ordered)
    raise MalformedPredicateError(f"unknown node {node!r}")


# ---------------------------------------------------------------------------
# Theories


class Theory:
    """Base interface; concrete theories fix atoms, evaluation and sat."""

    k: int
    can_decide_sat = False
    can_enumerate = False
    has_completion_property = False

    def validate_atom(self, atom: AtomPayload) -> None:
        raise NotImplementedError

    def eval_atom(self, atom: AtomPayload, valuation: Valuation) -> bool:
        raise NotImplementedError

    def letters(self) -> tuple:
        raise CapabilityError(f"{type(self).__name__} letters are not enumerable")

    def conjunct_witness(self, literals) -> Optional[Valuation]:
        """Satisfying valuation of a conjunction of (atom, polarity) literals."""
        raise CapabilityError(f"{type(self).__name__} cannot decide satisfiability")

    def contains_letter(self, letter: Letter) -> bool:
        return True

    # -- predicate constructors

    def true(self) -> "Predicate":
        return Predicate(self, Top())

    def false(self) -> "Predicate":
        return Predicate(self, Bottom())

    def atom(self, payload: AtomPayload) -> "Predicate":
        self.validate_atom(payload)
        return Predicate(self, Atom(payload))


@dataclass(frozen=True)
class FiniteTheory(Theory):
    """Finite alphabet; atoms test membership of a lookback letter in a set."""

    alphabet: tuple
    k: int = 0
    can_decide_sat = True
    can_enumerate = True
    has_completion_property = False

    def __post_init__(self):
        if len(set(self.alphabet)) != len(self.alphabet) or not self.alphabet:
            raise MalformedPredicateError("alphabet must be nonempty without duplicates")

    def validate_atom(self, atom: AtomPayload) -> None:
        if not isinstance(atom, Membership):
            raise MalformedPredicateError(f"finite theory cannot use atom {atom!r}")
        if not 0 <= atom.offset <= self.k:
            raise MalformedPredicateError(f"variable x-{atom.offset} outside lookback 0..{self.k}")
        unknown = set(atom.letters) - set(self.alphabet)
        if unknown:
            raise MalformedPredicateError(f"letters {sorted(map(str, unknown))} not in alphabet")

    def eval_atom(self, atom: Membership, valuation: Valuation) -> bool:
        return valuation.var(atom.offset) in atom.letters

    def letters(self) -> tuple:
        return self.alphabet

    def contains_letter(self, letter: Letter) -> bool:
        return letter in self.alphabet

    def member(self, offset: int, letters: Iterable[Letter]) -> "Predicate":
        return self.atom(Membership(offset, frozenset(letters)))

    def conjunct_witness(self, literals) -> Optional[Valuation]:
        allowed = [set(self.alphabet) for _ in range(self.k + 1)]
        for atom, positive in literals:
            if not isinstance(atom, Membership):
                raise MalformedPredicateError(f"finite theory cannot use atom {atom!r}")
            if positive:
                allowed[atom.offset] &= set(atom.letters)
            else:
                allowed[atom.offset] -= set(atom.letters)
            if not allowed[atom.offset]:
                return None
        # stable pick: first letter in alphabet order per variable
        order = {letter: i for i, letter in enumerate(self.alphabet)}
        choice = [min(s, key=order.__getitem__) for s in allowed]
        window = tuple(choice[self.k - i] for i in range(self.k + 1))
        return Valuation(window)


@dataclass(frozen=True)
class DenseOrderTheory(Theory):
    """Rational letters compared with < <= = != against each other or constants.

    Deliberately excludes arithmetic atoms; satisfiability reduces to cycle
    detection in an order-constraint graph and stays decidable, and the
    dense unbounded domain gives the completion property.
    """

    k: int = 0
    can_decide_sat = True
    can_enumerate = False
    has_completion_property = True

    def validate_atom(self, atom: AtomPayload) -> None:
        if not isinstance(atom, Comparison):
            raise MalformedPredicateError(f"dense-order theory cannot use atom {atom!r}")
        if atom.op not in ("<", "<=", "=", "!="):
            raise MalformedPredicateError(f"unknown comparison operator {atom.op!r}")
        for term in (atom.lhs, atom.rhs):
            if isinstance(term, Var) and not 0 <= term.offset <= self.k:
                raise MalformedPredicateError(
                    f"variable x-{term.offset} outside lookback 0..{self.k}"
                )

    def eval_atom(self, atom: Comparison, valuation: Valuation) -> bool:
        def value(term: Term) -> Fraction:
            if isinstance(term, Var):
                v = valuation.var(term.offset)
                if not isinstance(v, (Fraction, int)):
                    raise MalformedPredicateError(f"letter {v!r} is not rational")
                return Fraction(v)
            return term.value

        a, b = value(atom.lhs), value(atom.rhs)
        return {"<": a < b, "<=": a <= b, "=": a == b, "!=": a != b}[atom.op]

    def contains_letter(self, letter: Letter) -> bool:
        return isinstance(letter, (Fraction, int))

    def compare(self, lhs: Term, op: str, rhs: Term) -> "Predicate":
        if op == ">":
            lhs, op, rhs = rhs, "<", lhs
        elif op == ">=":
            lhs, op, rhs = rhs, "<=", lhs
        return self.atom(Comparison(lhs, op, rhs))

    def conjunct_witness(self, literals) -> Optional[Valuation]:
        constraints = []
        for atom, positive in literals:
            if not isinstance(atom, Comparison):
                raise MalformedPredicateError(f"dense-order theory cannot use atom {atom!r}")
            lhs = ("v", atom.lhs.offset) if isinstance(atom.lhs, Var) else ("c", atom.lhs.value)
            rhs = ("v", atom.rhs.offset) if isinstance(atom.rhs, Var) else ("c", atom.rhs.value)
            constraints.append(_signed_constraint(lhs, atom.op, rhs, positive))
        solution = solve_order_constraints(constraints)
        if solution is None:
            return None
        window = tuple(
            solution.get(self.k - i, Fraction(0)) for i in range(self.k + 1)
        )
        return Valuation(window)


@dataclass(frozen=True)
class CustomTheory(Theory):
    """Opaque letters with named atoms; evaluation only, no satisfiability."""

    k: int
    atoms: tuple = ()  # CustomAtom payloads usable with this theory
    can_decide_sat = False
    can_enumerate = False
    has_completion_property = False

    def named(self, name: str) -> "Predicate":
        for a in self.atoms:
            if a.name == name:
                return self.atom(a)
        raise MalformedPredicateError(f"unknown custom atom {name!r}")

    def validate_atom(self, atom: AtomPayload) -> None:
        if not isinstance(atom, CustomAtom):
            raise MalformedPredicateError(f"custom theory cannot use atom {atom!r}")

    def eval_atom(self, atom: CustomAtom, valuation: Valuation) -> bool:
        return bool(atom.fn(valuation))


@dataclass(frozen=True)
class TrackedTheory(Theory):
    """A base theory whose letters carry extra boolean track bits.

    Letters are ``(base_letter, bits)`` pairs. Base atoms apply to the
    projection; ``TrackBit`` atoms read individual bits. Used internally to
    compile formulas whose variables become tracks.
    """

    base: Theory
    tracks: int

    @property
    def k(self) -> int:  # type: ignore[override]
        return self.base.k

    @property
    def can_decide_sat(self) -> bool:  # type: ignore[override]
        return self.base.can_decide_sat

    @property
    def can_enumerate(self) -> bool:  # type: ignore[override]
        return self.base.can_enumerate

    @property
    def has_completion_property(self) -> bool:  # type: ignore[override]
        return self.base.has_completion_property

    def validate_atom(self, atom: AtomPayload) -> None:
        if isinstance(atom, TrackBit):
            if not 0 <= atom.track < self.tracks:
                raise MalformedPredicateError(f"track {atom.track} out of range")
            if not 0 <= atom.offset <= self.k:
                raise MalformedPredicateError(f"variable x-{atom.offset} outside lookback")
            if atom.bit not in (0, 1):
                raise MalformedPredicateError("track bit must be 0 or 1")
        else:
            self.base.validate_atom(atom)

    def _project(self, valuation: Valuation) -> Valuation:
        return Valuation(tuple(l[0] for l in valuation.letters))

    def eval_atom(self, atom: AtomPayload, valuation: Valuation) -> bool:
        if isinstance(atom, TrackBit):
            _, bits = valuation.letters[self.k - atom.offset]
            return bits[atom.track] == atom.bit
        return self.base.eval_atom(atom, self._project(valuation))

    def letters(self) -> tuple:
        combos = list(product((0, 1), repeat=self.tracks))
        return tuple((b, bits) for b in self.base.letters() for bits in combos)

    def contains_letter(self, letter: Letter) -> bool:
        return (
            isinstance(letter, tuple)
            and len(letter) == 2
            and self.base.contains_letter(letter[0])
            and len(letter[1]) == self.tracks
        )

    def bit(self, track: int, value: int, offset: int = 0) -> "Predicate":
        return self.atom(TrackBit(track, offset, value))

    def conjunct_witness(self, literals) -> Optional[Valuation]:
        base_literals = []
        bits_required: dict[tuple[int, int], int] = {}
        for atom, positive in literals:
            if isinstance(atom, TrackBit):
                want = atom.bit if positive else 1 - atom.bit
                key = (atom.offset, atom.track)
                if bits_required.setdefault(key, want) != want:
                    return None
            else:
                base_literals.append((atom, positive))
        base_val = self.base.conjunct_witness(base_literals)
        if base_val is None:
            return None
        window = []
        for i, letter in enumerate(base_val.letters):
            offset = self.k - i
            bits = tuple(
                bits_required.get((offset, t), 0) for t in range(self.tracks)
            )
            window.append((letter, bits))
        return Valuation(tuple(window))


# ---------------------------------------------------------------------------
# Predicates


@dataclass(frozen=True)
class Predicate:
    """A boolean combination of theory atoms over the lookback variables."""

    theory: Theory
    root: Node

    def text(self) -> str:
        return node_text(self.root)

    def __and__(self, other: "Predicate") -> "Predicate":
        return combine("and", [self, other])

    def __or__(self, other: "Predicate") -> "Predicate":
        return combine("or", [self, other])

    def __invert__(self) -> "Predicate":
        return combine("not", [self])


def _validate_nodes(theory: Theory, node: Node) -> None:
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Atom):
            theory.validate_atom(n.atom)
        elif isinstance(n, Not):
            stack.append(n.child)
        elif isinstance(n, (And, Or)):
            stack.extend(n.children)


def eval_predicate(pred: Predicate, valuation: Valuation) -> bool:
    """Truth of ``pred`` under a full assignment of the lookback variables."""
    if valuation.k != pred.theory.k:
        raise MalformedPredicateError(
            f"valuation has {valuation.k + 1} letters, theory expects {pred.theory.k + 1}"
        )

    def go(node: Node) -> bool:
        if isinstance(node, Top):
            return True
        if isinstance(node, Bottom):
            return False
        if isinstance(node, Atom):
            pred.theory.validate_atom(node.atom)
            return pred.theory.eval_atom(node.atom, valuation)
        if isinstance(node, Not):
            return not go(node.child)
        if isinstance(node, And):
            return all(go(c) for c in node.children)
        if isinstance(node, Or):
            return any(go(c) for c in node.children)
        raise MalformedPredicateError(f"unknown node {node!r}")

    return go(pred.root)


def combine(op: str, args: Sequence[Predicate]) -> Predicate:
    """Boolean combination; all arguments must share one theory."""
    if not args:
        raise MalformedPredicateError("combine needs at least one argument")
    theory = args[0].theory
    for a in args[1:]:
        if a.theory != theory:
            raise TheoryMismatchError("predicates belong to different theories")
    if op == "not":
        if len(args) != 1:
            raise MalformedPredicateError("'not' takes exactly one argument")
        return Predicate(theory, normalize(Not(args[0].root)))
    if op == "and":
        return Predicate(theory, normalize(And(tuple(a.root for a in args))))
    if op == "or":
        return Predicate(theory, normalize(Or(tuple(a.root for a in args))))
    raise MalformedPredicateError(f"unknown combinator {op!r}")


def enumerate_letters(theory: Theory) -> tuple:
    """Each letter of a finite alphabet exactly once, in stable order."""
    if not theory.can_enumerate:
        raise CapabilityError(f"{type(theory).__name__} letters are not enumerable")
    return theory.letters()


def _dnf_conjuncts(node: Node, budget: int) -> list[Optional[dict]]:
    """Disjunctive normal form as atom->polarity dicts; None marks a dropped
    (internally contradictory) conjunct. Raises when the budget is exceeded."""

    def merge(a: Optional[dict], b: Optional[dict]) -> Optional[dict]:
        if a is None or b is None:
            return None
        out = dict(a)
        for atom, pol in b.items():
            if out.setdefault(atom, pol) != pol:
                return None
        return out

    def go(n: Node, positive: bool) -> list[Optional[dict]]:
        if isinstance(n, Top):
            return [{}] if positive else []
        if isinstance(n, Bottom):
            return [] if positive else [{}]
        if isinstance(n, Atom):
            return [{n.atom: positive}]
        if isinstance(n, Not):
            return go(n.child, not positive)
        both = n.children if isinstance(n, (And, Or)) else None
        if both is None:
            raise MalformedPredicateError(f"unknown node {n!r}")
        conjunctive = isinstance(n, And) == positive
        if conjunctive:
            acc: list[Optional[dict]] = [{}]
            for child in both:
                nxt = []
                for c in go(child, positive):
                    for a in acc:
                        nxt.append(merge(a, c))
                        if len(nxt) > budget:
                            raise BudgetExceededError(
                                f"DNF exceeded the {budget}-conjunct budget"
                            )
                acc = nxt
            return acc
        out: list[Optional[dict]] = []
        for child in both:
            out.extend(go(child, positive))
            if len(out) > budget:
                raise BudgetExceededError(f"DNF exceeded the {budget}-conjunct budget")
        return out

    return go(node, True)


def is_satisfiable(
    pred: Predicate, minterm_budget: int = DEFAULT_MINTERM_BUDGET
) -> tuple[bool, Optional[Valuation]]:
    """Decide satisfiability; on success the witness re-checks under
    ``eval_predicate``. Requires a sat-capable theory."""
    theory = pred.theory
    if not theory.can_decide_sat:
        raise CapabilityError(f"{type(theory).__name__} cannot decide satisfiability")
    _validate_nodes(theory, pred.root)
    for conjunct in _dnf_conjuncts(pred.root, minterm_budget):
        if conjunct is None:
            continue
        witness = theory.conjunct_witness(list(conjunct.items()))
        if witness is not None:
            return True, witness
    return False, None


# ---------------------------------------------------------------------------
# Order-constraint solving (shared with the boundedness analyzer)

OrderTerm = tuple  # ('v', name) or ('c', Fraction)


def _signed_constraint(lhs: OrderTerm, op: str, rhs: OrderTerm, positive: bool):
    if positive:
        return (lhs, op, rhs)
    return {
        "<": (rhs, "<=", lhs),
        "<=": (rhs, "<", lhs),
        "=": (lhs, "!=", rhs),
        "!=": (lhs, "=", rhs),
    }[op]


def solve_order_constraints(constraints: Iterable[tuple]) -> Optional[dict]:
    """Satisfying rational assignment for order constraints, or None.

    Constraints are ``(lhs, op, rhs)`` triples over terms ``('v', name)`` /
    ``('c', Fraction)`` with op in < <= = !=. Works over the dense unbounded
    order: equalities are merged, a strict cycle or an equality clashing with
    != is a contradiction, and any remaining partial order is realized with
    constants pinned to their values.
    """
    constraints = list(constraints)
    terms: dict = {}

    def key(t: OrderTerm):
        return ("c", Fraction(t[1])) if t[0] == "c" else ("v", t[1])

    for lhs, _, rhs in constraints:
        terms.setdefault(key(lhs), None)
        terms.setdefault(key(rhs), None)
    consts = sorted({k[1] for k in terms if k[0] == "c"})
    # fixed facts about mentioned constants
    facts = [(("c", a), "<", ("c", b)) for a, b in zip(consts, consts[1:])]

    parent: dict = {t: t for t in terms}

    def find(t):
        while parent[t] != t:
            parent[t] = parent[parent[t]]
            t = parent[t]
        return t

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    normalized = []
    for lhs, op, rhs in constraints + facts:
        a, b = key(lhs), key(rhs)
        if op == "=":
            union(a, b)
        else:
            normalized.append((a, op, b))

    # strict/weak edges between representatives
    edges: dict = {}
    nonequal: list = []
    for a, op, b in normalized:
        ra, rb = find(a), find(b)
        if op == "!=":
            nonequal.append((ra, rb))
            continue
        if op in ("<", "<="):
            strict = op == "<"
            if ra == rb:
                if strict:
                    return None
                continue
            edges.setdefault((ra, rb), False)
            edges[(ra, rb)] = edges[(ra, rb)] or strict

    reps = sorted({find(t) for t in terms})
    succ: dict = {r: [] for r in reps}
    for (a, b), strict in edges.items():
        succ[a].append(b)

    # iterative Tarjan SCC
    index: dict = {}
    low: dict = {}
    on_stack: dict = {}
    stack: list = []
    scc_of: dict = {}
    counter = [0]
    scc_count = [0]
    for root in reps:
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            node, pi = work.pop()
            if pi == 0:
                index[node] = low[node] = counter[0]
                counter[0] += 1
                stack.append(node)
                on_stack[node] = True
            recurse = False
            for i in range(pi, len(succ[node])):
                child = succ[node][i]
                if child not in index:
                    work.append((node, i + 1))
                    work.append((child, 0))
                    recurse = True
                    break
                if on_stack.get(child):
                    low[node] = min(low[node], index[child])
            if recurse:
                continue
            if low[node] == index[node]:
                while True:
                    top = stack.pop()
                    on_stack[top] = False
                    scc_of[top] = scc_count[0]
                    if top == node:
                        break
                scc_count[0] += 1
            if work:
                parent_node = work[-1][0]
                low[parent_node] = min(low[parent_node], low[node])

    # a strict edge inside an SCC is a contradiction; weak cycles merge
    for (a, b), strict in edges.items():
        if scc_of[a] == scc_of[b] and strict:
            return None
    classes: dict = {}
    for r in reps:
        classes.setdefault(scc_of[r], []).append(r)
    class_const: dict = {}
    for cid, members in classes.items():
        cs = sorted({m[1] for m in members if m[0] == "c"})
        if len(cs) > 1:
            return None
        if cs:
            class_const[cid] = cs[0]
    for a, b in nonequal:
        if scc_of[a] == scc_of[b]:
            return None

    # condensation is a DAG; topologically order it (Kahn, stable keys)
    dag_succ: dict = {cid: set() for cid in classes}
    indeg: dict = {cid: 0 for cid in classes}
    for (a, b), _ in edges.items():
        ca, cb = scc_of[a], scc_of[b]
        if ca != cb and cb not in dag_succ[ca]:
            dag_succ[ca].add(cb)
            indeg[cb] += 1

    def class_key(cid):
        return (0, class_const[cid]) if cid in class_const else (1, min(classes[cid]))

    ready = sorted((cid for cid in classes if indeg[cid] == 0), key=class_key)
    order = []
    while ready:
        cid = ready.pop(0)
        order.append(cid)
        for nxt in sorted(dag_succ[cid], key=class_key):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
        ready.sort(key=class_key)

    # assign strictly increasing values along the topological order, with
    # constant classes pinned; density lets us fit between adjacent pins
    values: dict = {}
    segment: list = []

    def flush(lo: Optional[Fraction], hi: Optional[Fraction]):
        m = len(segment)
        for i, cid in enumerate(segment, start=1):
            if lo is None and hi is None:
                values[cid] = Fraction(i - 1)
            elif lo is None:
                values[cid] = hi - (m - i + 1)
            elif hi is None:
                values[cid] = lo + i
            else:
                values[cid] = lo + (hi - lo) * i / (m + 1)
        segment.clear()

    prev_pin: Optional[Fraction] = None
    for cid in order:
        if cid in class_const:
            flush(prev_pin, class_const[cid])
            values[cid] = class_const[cid]
            prev_pin = class_const[cid]
        else:
            segment.append(cid)
    flush(prev_pin, None)

    assignment: dict = {}
    for t in terms:
        if t[0] == "v":
            assignment[t[1]] = values[scc_of[find(t)]]
    return assignment


# ---------------------------------------------------------------------------
# Track projection helpers (formula compilation)


def lift_to_tracked(pred: Predicate, tracked: TrackedTheory) -> Predicate:
    if isinstance(pred.theory, TrackedTheory):
        if pred.theory != tracked:
            raise TheoryMismatchError("predicate lifted into a different tracked theory")
        return pred
    if pred.theory != tracked.base:
        raise TheoryMismatchError("predicate does not belong to the base theory")
    return Predicate(tracked, pred.root)


def substitute_track(pred: Predicate, track: int, value: int) -> Predicate:
    """Replace every bit atom of ``track`` with its truth under ``value``."""

    def go(node: Node) -> Node:
        if isinstance(node, Atom) and isinstance(node.atom, TrackBit):
            if node.atom.track == track:
                return Top() if node.atom.bit == value else Bottom()
            return node
        if isinstance(node, Not):
            return Not(go(node.child))
        if isinstance(node, And):
            return And(tuple(go(c) for c in node.children))
        if isinstance(node, Or):
            return Or(tuple(go(c) for c in node.children))
        return node

    return Predicate(pred.theory, normalize(go(pred.root)))


def project_track(pred: Predicate, track: int) -> Predicate:
    """Erase one track by disjoining the guard over its two bit values."""
    zero = substitute_track(pred, track, 0)
    one = substitute_track(pred, track, 1)
    return Predicate(pred.theory, normalize(Or((zero.root, one.root))))


def strip_tracks(pred: Predicate, base: Theory) -> Predicate:
    """Rebind a track-free predicate to the base theory."""

    def check(node: Node) -> None:
        if isinstance(node, Atom) and isinstance(node.atom, TrackBit):
            raise MalformedPredicateError("predicate still references a track bit")
        if isinstance(node, Not):
            check(node.child)
        elif isinstance(node, (And, Or)):
            for c in node.children:
                check(c)

    check(pred.root)
    out = Predicate(base, pred.root)
    _validate_nodes(base, out.root)
    return out


# ---------------------------------------------------------------------------
# Text syntax

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<var>x-?\d+)
  | (?P<number>\d+\.\d+|\d+/\d+|\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>&&|\|\||<=|>=|!=|[!<>=(){},\-&|.\[\]+*])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[tuple[str, str, int, int]]:
    """Tokens as (kind, value, line, column); raises ParseError on garbage."""
    tokens = []
    line, col = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        value = m.group()
        if kind != "ws":
            tokens.append((kind, value, line, col))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            col = len(value) - value.rfind("\n") - 1
        else:
            col += len(value)
        pos = m.end()
    return tokens


class _TokenStream:
    def __init__(self, tokens, text_len_hint: int = 0):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        if self.pos < len(self.tokens):
            return self.tokens[self.pos]
        return ("eof", "", 0, 0)

    def next(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect(self, value: str):
        kind, val, line, col = self.peek()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", line, col)
        return self.next()

    def error(self, message: str):
        _, val, line, col = self.peek()
        raise ParseError(message, line, col)


def _parse_fraction(text: str) -> Fraction:
    return Fraction(text)


def _parse_letter(ts: _TokenStream):
    kind, val, line, col = ts.peek()
    if val == "(":
        ts.next()
        parts = [_parse_letter(ts)]
        while ts.peek()[1] == ",":
            ts.next()
            parts.append(_parse_letter(ts))
        ts.expect(")")
        return tuple(parts)
    if kind in ("name", "number", "var"):
        ts.next()
        return val
    raise ParseError("expected a letter", line, col)


def _parse_term(ts: _TokenStream, theory: Theory) -> Term:
    kind, val, line, col = ts.peek()
    if kind == "var":
        ts.next()
        return Var(-int(val[1:]) if val[1] == "-" else int(val[1:]))
    neg = False
    if val == "-":
        ts.next()
        neg = True
        kind, val, line, col = ts.peek()
    if kind == "number":
        ts.next()
        value = _parse_fraction(val)
        return Const(-value if neg else value)
    raise ParseError("expected a variable or numeric constant", line, col)


def _parse_atom(ts: _TokenStream, theory: Theory) -> Node:
    kind, val, line, col = ts.peek()
    if val == "true":
        ts.next()
        return Top()
    if val == "false":
        ts.next()
        return Bottom()
    if kind == "var":
        save = ts.pos
        var = _parse_term(ts, theory)
        nkind, nval, nline, ncol = ts.peek()
        if nval == "in":
            ts.next()
            ts.expect("{")
            letters = [_parse_letter(ts)]
            while ts.peek()[1] == ",":
                ts.next()
                letters.append(_parse_letter(ts))
            ts.expect("}")
            atom = Membership(var.offset, frozenset(letters))
            theory.validate_atom(atom)
            return Atom(atom)
        if nval in ("<", "<=", "=", "!=", ">", ">="):
            ts.next()
            rhs = _parse_term(ts, theory)
            lhs: Term = var
            op = nval
            if op == ">":
                lhs, op, rhs = rhs, "<", lhs
            elif op == ">=":
                lhs, op, rhs = rhs, "<=", lhs
            atom = Comparison(lhs, op, rhs)
            theory.validate_atom(atom)
            return Atom(atom)
        ts.pos = save
        ts.error("expected 'in' or a comparison after a variable")
    if kind == "number" or val == "-":
        lhs = _parse_term(ts, theory)
        nkind, nval, nline, ncol = ts.peek()
        if nval not in ("<", "<=", "=", "!=", ">", ">="):
            ts.error("expected a comparison operator")
        ts.next()
        rhs = _parse_term(ts, theory)
        op = nval
        if op == ">":
            lhs, op, rhs = rhs, "<", lhs
        elif op == ">=":
            lhs, op, rhs = rhs, "<=", lhs
        atom = Comparison(lhs, op, rhs)
        theory.validate_atom(atom)
        return Atom(atom)
    if kind == "name":
        if not isinstance(theory, CustomTheory):
            raise ParseError(f"unknown atom {val!r}", line, col)
        ts.next()
        return theory.named(val).root
    raise ParseError(f"expected an atom, found {val or 'end of input'!r}", line, col)


def _parse_unary(ts: _TokenStream, theory: Theory) -> Node:
    kind, val, line, col = ts.peek()
    if val == "!":
        ts.next()
        return Not(_parse_unary(ts, theory))
    if val == "(":
        ts.next()
        node = _parse_or(ts, theory)
        ts.expect(")")
        return node
    return _parse_atom(ts, theory)


def _parse_and(ts: _TokenStream, theory: Theory) -> Node:
    parts = [_parse_unary(ts, theory)]
    while ts.peek()[1] == "&&":
        ts.next()
        parts.append(_parse_unary(ts, theory))
    return parts[0] if len(parts) == 1 else And(tuple(parts))


def _parse_or(ts: _TokenStream, theory: Theory) -> Node:
    parts = [_parse_and(ts, theory)]
    while ts.peek()[1] == "||":
        ts.next()
        parts.append(_parse_and(ts, theory))
    return parts[0] if len(parts) == 1 else Or(tuple(parts))


def parse_predicate(text: str, theory: Theory) -> Predicate:
    """Parse the guard syntax: ``x0 in{a,b}``, ``x0 > x-1``, ``x0 >= 3/2``,
    connectives ``&& || !``, parentheses, ``true``/``false``."""
    ts = _TokenStream(tokenize(text))
    node = _parse_or(ts, theory)
    kind, val, line, col = ts.peek()
    if kind != "eof":
        raise ParseError(f"unexpected trailing input {val!r}", line, col)
    return Predicate(theory, normalize(node))


# ---------------------------------------------------------------------------
# JSON codecs


def theory_to_json(theory: Theory) -> dict:
    if isinstance(theory, FiniteTheory):
        return {"kind": "finite", "letters": [letter_to_json(l) for l in theory.alphabet]}
    if isinstance(theory, DenseOrderTheory):
        return {"kind": "dense_order"}
    raise CapabilityError(f"{type(theory).__name__} is not serializable")


def theory_from_json(data: dict, k: int) -> Theory:
    kind = data.get("kind")
    if kind == "finite":
        return FiniteTheory(tuple(letter_from_json(l, "finite") for l in data["letters"]), k)
    if kind == "dense_order":
        return DenseOrderTheory(k)
    raise MalformedPredicateError(f"unknown theory kind {kind!r}")


def letter_to_json(letter: Letter):
    if isinstance(letter, tuple):
        return [letter_to_json(p) for p in letter]
    if isinstance(letter, Fraction):
        return str(letter) if letter.denominator != 1 else int(letter)
    return letter


def letter_from_json(data, kind: str) -> Letter:
    if isinstance(data, list):
        return tuple(letter_from_json(p, kind) for p in data)
    if kind == "dense_order":
        return Fraction(str(data))
    return data
