"""Lookback automata with predicate guards and their closure constructions.

A ``LookbackAutomaton`` reads a word one letter at a time but each transition
guard sees the current letter together with the previous ``k`` letters. Words
shorter than ``k`` are always rejected; a word of length exactly ``k`` is
accepted iff the initial state is final (this makes star expressions open
windows right after the initial lookback block, see the runtime module).

All constructions are pure: determinize, complement, intersect, union,
k-overlap concatenation, dead-state analysis, and expansion of finite-theory
automata into classic letter-labeled automata.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import (
    BudgetExceededError,
    CapabilityError,
    InputTypeError,
    PreconditionError,
    TheoryMismatchError,
)
from .theory import (
    Predicate,
    Theory,
    Valuation,
    combine,
    enumerate_letters,
    eval_predicate,
    is_satisfiable,
    letter_from_json,
    letter_to_json,
    parse_predicate,
    theory_from_json,
    theory_to_json,
)

DEFAULT_OUT_DEGREE_LIMIT = 20


@dataclass(frozen=True)
class RunTrace:
    """State sequence of a deterministic run and its verdict."""

    states: tuple
    accepted: bool


class LookbackAutomaton:
    """States, one initial, finals, and a sparse guard map Q x Q -> Predicate.

    Guards that are absent mean "false". ``deterministic`` is a certificate
    flag: True only when set by a construction that guarantees pairwise
    unsatisfiable out-guards (or verified via ``certify_deterministic``).
    Instances are immutable by convention; constructions return new ones.
    """

    def __init__(
        self,
        theory: Theory,
        states: Sequence[str],
        initial: str,
        finals: Iterable[str],
        guards: dict,
        deterministic: Optional[bool] = None,
    ):
        self.theory = theory
        self.states = tuple(states)
        self.initial = initial
        self.finals = frozenset(finals)
        self.guards = dict(guards)
        self.deterministic = deterministic
        if initial not in self.states:
            raise PreconditionError(f"initial state {initial!r} not among states")
        if not self.finals <= set(self.states):
            raise PreconditionError("finals must be a subset of states")
        for (src, dst) in self.guards:
            if src not in self.states or dst not in self.states:
                raise PreconditionError(f"transition {src!r}->{dst!r} uses unknown states")

    @property
    def k(self) -> int:
        return self.theory.k

    def guard(self, src: str, dst: str) -> Optional[Predicate]:
        return self.guards.get((src, dst))

    def out_edges(self, src: str) -> list[tuple[str, Predicate]]:
        return [(dst, g) for (s, dst), g in sorted(self.guards.items()) if s == src]

    def successor(self, state: str, window: Valuation) -> Optional[str]:
        """Deterministic step; None when no guard matches (the run dies)."""
        for dst, g in self.out_edges(state):
            if eval_predicate(g, window):
                return dst
        return None

    def successors(self, states: frozenset, window: Valuation) -> frozenset:
        out = set()
        for q in states:
            for dst, g in self.out_edges(q):
                if eval_predicate(g, window):
                    out.add(dst)
        return frozenset(out)

    def __repr__(self) -> str:
        return (
            f"LookbackAutomaton(k={self.k}, states={len(self.states)}, "
            f"transitions={len(self.guards)}, deterministic={self.deterministic})"
        )

    # -- serialization

    def to_json(self) -> dict:
        transitions = [
            {"from": src, "to": dst, "guard": g.text()}
            for (src, dst), g in sorted(self.guards.items())
        ]
        return {
            "theory": theory_to_json(self.theory),
            "k": self.k,
            "states": sorted(self.states),
            "initial": self.initial,
            "finals": sorted(self.finals),
            "transitions": transitions,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, data: dict) -> "LookbackAutomaton":
        theory = theory_from_json(data["theory"], data["k"])
        guards = {}
        for t in data["transitions"]:
            guards[(t["from"], t["to"])] = parse_predicate(t["guard"], theory)
        return cls(theory, data["states"], data["initial"], data["finals"], guards)


def _check_same_theory(a: LookbackAutomaton, b: LookbackAutomaton) -> None:
    if a.theory != b.theory:
        raise TheoryMismatchError("automata belong to different theories")


def _validate_word(a: LookbackAutomaton, word: Sequence) -> None:
    for letter in word:
        if not a.theory.contains_letter(letter):
            raise InputTypeError(f"letter {letter!r} outside the theory domain")


def run_accepts(a: LookbackAutomaton, word: Sequence) -> tuple[bool, Optional[RunTrace]]:
    """Acceptance of ``word``; a state trace is reported for certified
    deterministic automata, nondeterministic ones are decided by subset
    simulation on the fly."""
    _validate_word(a, word)
    w = tuple(word)
    k = a.k
    if len(w) < k:
        return False, (RunTrace((), False) if a.deterministic else None)
    if len(w) == k:
        ok = a.initial in a.finals
        return ok, (RunTrace((a.initial,), ok) if a.deterministic else None)
    if a.deterministic:
        state: Optional[str] = a.initial
        states = [a.initial]
        for i in range(k, len(w)):
            window = Valuation(w[i - k : i + 1])
            state = a.successor(state, window)
            if state is None:
                return False, RunTrace(tuple(states), False)
            states.append(state)
        ok = state in a.finals
        return ok, RunTrace(tuple(states), ok)
    current = frozenset([a.initial])
    for i in range(k, len(w)):
        window = Valuation(w[i - k : i + 1])
        current = a.successors(current, window)
        if not current:
            return False, None
    return bool(current & a.finals), None


def clean(a: LookbackAutomaton) -> LookbackAutomaton:
    """Drop unsatisfiable guards (for sat-capable theories)."""
    if not a.theory.can_decide_sat:
        return a
    guards = {}
    for key, g in a.guards.items():
        sat, _ = is_satisfiable(g)
        if sat:
            guards[key] = g
    return LookbackAutomaton(a.theory, a.states, a.initial, a.finals, guards, a.deterministic)


def certify_deterministic(a: LookbackAutomaton) -> bool:
    """Check pairwise unsatisfiability of distinct out-guards."""
    if not a.theory.can_decide_sat:
        raise CapabilityError("determinism certificate needs a sat-capable theory")
    for q in a.states:
        edges = a.out_edges(q)
        for i in range(len(edges)):
            for j in range(i + 1, len(edges)):
                sat, _ = is_satisfiable(combine("and", [edges[i][1], edges[j][1]]))
                if sat:
                    return False
    return True


def is_clean(a: LookbackAutomaton) -> bool:
    if not a.theory.can_decide_sat:
        return True
    return all(is_satisfiable(g)[0] for g in a.guards.values())


def determinize(
    a: LookbackAutomaton, out_degree_limit: int = DEFAULT_OUT_DEGREE_LIMIT
) -> LookbackAutomaton:
    """Subset construction over guard minterms.

    For each subset state, every subset of its outgoing transition set
    induces a minterm (the chosen guards conjoined with the negations of the
    others); satisfiable minterms with equal target sets are disjoined. The
    result is complete, clean and deterministic by construction. The empty
    subset acts as an explicit trap state.
    """
    if not a.theory.can_decide_sat:
        raise CapabilityError("determinization needs a sat-capable theory")
    start = frozenset([a.initial])
    names: dict[frozenset, str] = {}
    order: list[frozenset] = []

    def name_of(subset: frozenset) -> str:
        if subset not in names:
            names[subset] = f"d{len(names)}"
            order.append(subset)
        return names[subset]

    name_of(start)
    guards: dict = {}
    finals = set()
    i = 0
    while i < len(order):
        subset = order[i]
        i += 1
        src = names[subset]
        if subset & a.finals:
            finals.add(src)
        # group out-edges by distinct guard: edges sharing a guard rise and
        # fall together, so distinct guards are the minterm decision variables
        guard_targets: dict[str, tuple[Predicate, set]] = {}
        for q in sorted(subset):
            for dst, g in a.out_edges(q):
                key = g.text()
                if key not in guard_targets:
                    guard_targets[key] = (g, set())
                guard_targets[key][1].add(dst)
        decisions = [guard_targets[key] for key in sorted(guard_targets)]
        if len(decisions) > out_degree_limit:
            raise BudgetExceededError(
                f"subset {sorted(subset)} has {len(decisions)} distinct out-guards "
                f"> {out_degree_limit}"
            )
        by_target: dict[frozenset, list[Predicate]] = {}

        def explore(idx: int, acc: Predicate, chosen: frozenset) -> None:
            sat, _ = is_satisfiable(acc)
            if not sat:
                return
            if idx == len(decisions):
                by_target.setdefault(chosen, []).append(acc)
                return
            g, targets = decisions[idx]
            explore(idx + 1, combine("and", [acc, g]), chosen | targets)
            explore(idx + 1, combine("and", [acc, combine("not", [g])]), chosen)

        explore(0, a.theory.true(), frozenset())
        for target, minterms in by_target.items():
            g = minterms[0] if len(minterms) == 1 else combine("or", minterms)
            guards[(src, name_of(target))] = g
    states = [names[s] for s in order]
    return LookbackAutomaton(a.theory, states, names[start], finals, guards, deterministic=True)


def complement(a: LookbackAutomaton) -> LookbackAutomaton:
    """Swap finals of the (complete) determinization.

    The complement is relative to words of length at least k+1, plus the
    length-k convention: a length-k word is accepted iff it was rejected.
    Shorter words stay rejected by both automata.
    """
    d = determinize(a)
    finals = set(d.states) - set(d.finals)
    return LookbackAutomaton(d.theory, d.states, d.initial, finals, d.guards, deterministic=True)


def intersect(a: LookbackAutomaton, b: LookbackAutomaton) -> LookbackAutomaton:
    """Product automaton; guards are conjoined and unsatisfiable pairs pruned."""
    _check_same_theory(a, b)
    sat_capable = a.theory.can_decide_sat

    def name(p: str, q: str) -> str:
        return f"({p},{q})"

    start = (a.initial, b.initial)
    seen = {start}
    frontier = [start]
    guards: dict = {}
    pairs = [start]
    while frontier:
        p, q = frontier.pop(0)
        for pd, pg in a.out_edges(p):
            for qd, qg in b.out_edges(q):
                g = combine("and", [pg, qg])
                if sat_capable and not is_satisfiable(g)[0]:
                    continue
                guards[(name(p, q), name(pd, qd))] = g
                if (pd, qd) not in seen:
                    seen.add((pd, qd))
                    frontier.append((pd, qd))
                    pairs.append((pd, qd))
    states = [name(p, q) for (p, q) in pairs]
    finals = [name(p, q) for (p, q) in pairs if p in a.finals and q in b.finals]
    det = True if (a.deterministic and b.deterministic) else None
    return LookbackAutomaton(
        a.theory, states, name(*start), finals, guards, deterministic=det
    )


def union(a: LookbackAutomaton, b: LookbackAutomaton) -> LookbackAutomaton:
    """Disjoint union behind a fresh initial state that copies both
    initials' outgoing guards; final iff either initial was final."""
    _check_same_theory(a, b)
    states = ["u0"] + [f"l.{q}" for q in a.states] + [f"r.{q}" for q in b.states]
    guards: dict = {}
    for (s, d), g in a.guards.items():
        guards[(f"l.{s}", f"l.{d}")] = g
    for (s, d), g in b.guards.items():
        guards[(f"r.{s}", f"r.{d}")] = g
    for d, g in a.out_edges(a.initial):
        guards[("u0", f"l.{d}")] = g
    for d, g in b.out_edges(b.initial):
        guards[("u0", f"r.{d}")] = g
    finals = {f"l.{q}" for q in a.finals} | {f"r.{q}" for q in b.finals}
    if a.initial in a.finals or b.initial in b.finals:
        finals.add("u0")
    return LookbackAutomaton(a.theory, states, "u0", finals, guards, deterministic=None)


def concat_k(a: LookbackAutomaton, b: LookbackAutomaton) -> LookbackAutomaton:
    """Concatenation overlapping on k letters: from every final state of the
    first automaton the machine may nondeterministically continue with the
    second automaton's initial out-guards; the overlap is re-read through the
    lookback window."""
    _check_same_theory(a, b)
    states = [f"l.{q}" for q in a.states] + [f"r.{q}" for q in b.states]
    guards: dict = {}
    for (s, d), g in a.guards.items():
        guards[(f"l.{s}", f"l.{d}")] = g
    for (s, d), g in b.guards.items():
        guards[(f"r.{s}", f"r.{d}")] = g
    for f in a.finals:
        for d, g in b.out_edges(b.initial):
            key = (f"l.{f}", f"r.{d}")
            guards[key] = combine("or", [guards[key], g]) if key in guards else g
    finals = {f"r.{q}" for q in b.finals}
    if b.initial in b.finals:
        # the right side holds its length-k identity words, so a word of the
        # left language alone is already in the concatenation
        finals |= {f"l.{q}" for q in a.finals}
    return LookbackAutomaton(a.theory, states, f"l.{a.initial}", finals, guards, deterministic=None)


def dead_states(a: LookbackAutomaton) -> frozenset:
    """States from which no final state is reachable along non-false guards.

    For sat-capable theories the automaton should be clean so stored guards
    are satisfiable; for evaluation-only theories plain edge presence is used
    as an over-approximation of liveness.
    """
    if a.theory.can_decide_sat:
        a = clean(a)
    preds: dict[str, set] = {q: set() for q in a.states}
    for (s, d) in a.guards:
        preds[d].add(s)
    alive = set(a.finals)
    frontier = list(a.finals)
    while frontier:
        q = frontier.pop()
        for p in preds[q]:
            if p not in alive:
                alive.add(p)
                frontier.append(p)
    return frozenset(set(a.states) - alive)


def trim(a: LookbackAutomaton) -> LookbackAutomaton:
    """Restrict to states reachable from the initial and co-reachable to a
    final state; the initial state is always kept."""
    if a.theory.can_decide_sat:
        a = clean(a)
    succs: dict[str, set] = {q: set() for q in a.states}
    for (s, d) in a.guards:
        succs[s].add(d)
    reach = {a.initial}
    frontier = [a.initial]
    while frontier:
        q = frontier.pop()
        for d in succs[q]:
            if d not in reach:
                reach.add(d)
                frontier.append(d)
    dead = dead_states(a)
    keep = {q for q in reach if q not in dead} | {a.initial}
    states = [q for q in a.states if q in keep]
    guards = {
        (s, d): g for (s, d), g in a.guards.items() if s in keep and d in keep
    }
    finals = [q for q in a.finals if q in keep]
    return LookbackAutomaton(a.theory, states, a.initial, finals, guards, a.deterministic)


# ---------------------------------------------------------------------------
# Finite expansion


@dataclass(frozen=True)
class FiniteAutomaton:
    """Classic automaton over single letters produced by lookback expansion.

    States are warmup prefixes ``(None, letters)`` shorter than k and full
    configurations ``(state, context)`` where ``context`` is the last k
    letters read. Used by the memory analyzer and by test oracles.
    """

    alphabet: tuple
    states: frozenset
    initial: tuple
    finals: frozenset
    delta: dict  # (state, letter) -> frozenset of states
    deterministic: bool = field(default=False)

    def step(self, states: frozenset, letter) -> frozenset:
        out = set()
        for q in states:
            out |= self.delta.get((q, letter), frozenset())
        return frozenset(out)

    def accepts(self, word: Sequence) -> bool:
        current = frozenset([self.initial])
        for letter in word:
            current = self.step(current, letter)
            if not current:
                return False
        return bool(current & self.finals)


def expand_finite(a: LookbackAutomaton) -> FiniteAutomaton:
    """Unfold lookback into explicit contexts of the last k letters.

    The expansion accepts exactly the same words of length >= k (including
    the length-k convention); words shorter than k end in warmup states and
    are rejected.
    """
    letters = enumerate_letters(a.theory)
    k = a.k
    initial = (None, ()) if k > 0 else (a.initial, ())
    states = {initial}
    delta: dict = {}
    finals = set()
    frontier = [initial]
    deterministic = True
    while frontier:
        state = frontier.pop()
        kind, payload = state
        if kind is None:
            prefix = payload
            for letter in letters:
                grown = prefix + (letter,)
                nxt = (a.initial, grown) if len(grown) == k else (None, grown)
                delta[(state, letter)] = frozenset([nxt])
                if nxt not in states:
                    states.add(nxt)
                    frontier.append(nxt)
        else:
            q, ctx = kind, payload
            if q in a.finals:
                finals.add(state)
            for letter in letters:
                window = Valuation(ctx + (letter,))
                targets = set()
                for dst, g in a.out_edges(q):
                    if eval_predicate(g, window):
                        targets.add((dst, (ctx + (letter,))[1:] if k else ()))
                if len(targets) > 1:
                    deterministic = False
                if targets:
                    delta[(state, letter)] = frozenset(targets)
                for t in targets:
                    if t not in states:
                        states.add(t)
                        frontier.append(t)
    return FiniteAutomaton(
        letters, frozenset(states), initial, frozenset(finals), delta, deterministic
    )


# ---------------------------------------------------------------------------
# Convenience JSON helpers


def automaton_to_json_str(a: LookbackAutomaton) -> str:
    return a.canonical_json()


def automaton_from_json_str(text: str) -> LookbackAutomaton:
    return LookbackAutomaton.from_json(json.loads(text))


def word_to_json(word: Sequence) -> list:
    return [letter_to_json(l) for l in word]


def word_from_json(data: Sequence, theory: Theory) -> tuple:
    kind = "dense_order" if not theory.can_enumerate else "finite"
    return tuple(letter_from_json(l, kind) for l in data)
