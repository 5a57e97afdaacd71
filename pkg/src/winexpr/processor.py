"""Online window extraction with pane-based aggregation.

The processor consumes a stream one letter at a time against a window
expression (deterministic prefix/window automaton pairs). The prefix state
decides where windows may begin; candidate starts are tracked per window
automaton state in a start-index map, so all candidates in one state advance
with a single transition. Stream elements are accumulated into panes, maximal
segments between window begin/end events, and a window's aggregate combines
its covering panes instead of re-folding the elements.

A window ``(start, end)`` is emitted the moment ``end`` is read. Its
aggregated content is ``w[start..end]``: the k letters of lookback before
``start`` influence guards but are not re-aggregated.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable, Optional

from .errors import InputTypeError, InvariantViolation, PreconditionError
from .formulas import WindowExpression
from .theory import Valuation
from .automata import LookbackAutomaton, dead_states, run_accepts


# ---------------------------------------------------------------------------
# Aggregators

_MISSING = object()


@dataclass(frozen=True)
class Aggregator:
    """Associative folding behavior: ``combine`` must be associative and
    ``add(acc, e)`` must equal ``combine(acc, add(empty(), e))``. Accumulator
    values are treated as immutable; ``add``/``combine`` return fresh ones."""

    name: str
    empty: Callable[[], Any]
    add: Callable[[Any, Any], Any]
    combine: Callable[[Any, Any], Any]
    finalize: Callable[[Any], Any] = lambda acc: acc


def _identity(x):
    return x


def count_aggregator() -> Aggregator:
    return Aggregator("count", lambda: 0, lambda a, _: a + 1, lambda a, b: a + b)


def sum_aggregator(key: Callable = _identity) -> Aggregator:
    return Aggregator("sum", lambda: 0, lambda a, e: a + key(e), lambda a, b: a + b)


def min_aggregator(key: Callable = _identity) -> Aggregator:
    def add(a, e):
        v = key(e)
        return v if a is _MISSING or v < a else a

    def comb(a, b):
        if a is _MISSING:
            return b
        if b is _MISSING:
            return a
        return a if a <= b else b

    return Aggregator("min", lambda: _MISSING, add, comb, lambda a: None if a is _MISSING else a)


def max_aggregator(key: Callable = _identity) -> Aggregator:
    def add(a, e):
        v = key(e)
        return v if a is _MISSING or v > a else a

    def comb(a, b):
        if a is _MISSING:
            return b
        if b is _MISSING:
            return a
        return a if a >= b else b

    return Aggregator("max", lambda: _MISSING, add, comb, lambda a: None if a is _MISSING else a)


def average_aggregator(key: Callable = _identity) -> Aggregator:
    def fin(acc):
        total, n = acc
        if n == 0:
            return None
        if isinstance(total, (int, Fraction)):
            return float(Fraction(total) / n)
        return total / n

    return Aggregator(
        "average",
        lambda: (0, 0),
        lambda a, e: (a[0] + key(e), a[1] + 1),
        lambda a, b: (a[0] + b[0], a[1] + b[1]),
        fin,
    )


def first_aggregator(key: Callable = _identity) -> Aggregator:
    return Aggregator(
        "first",
        lambda: _MISSING,
        lambda a, e: key(e) if a is _MISSING else a,
        lambda a, b: b if a is _MISSING else a,
        lambda a: None if a is _MISSING else a,
    )


def last_aggregator(key: Callable = _identity) -> Aggregator:
    return Aggregator(
        "last",
        lambda: _MISSING,
        lambda a, e: key(e),
        lambda a, b: a if b is _MISSING else b,
        lambda a: None if a is _MISSING else a,
    )


BUILTIN_AGGREGATORS = {
    "count": count_aggregator,
    "sum": sum_aggregator,
    "min": min_aggregator,
    "max": max_aggregator,
    "average": average_aggregator,
    "first": first_aggregator,
    "last": last_aggregator,
}


# ---------------------------------------------------------------------------
# Runtime state


class Pane:
    """A maximal stream segment between window begin/end events."""

    __slots__ = ("start", "end", "acc")

    def __init__(self, start: int, acc, end: Optional[int] = None):
        self.start = start
        self.end = end  # None while open
        self.acc = acc

    def __repr__(self):
        return f"Pane([{self.start}, {self.end if self.end is not None else '...'}])"


@dataclass(frozen=True)
class WindowOutput:
    pair: int
    start: int
    end: int
    aggregate: Any


@dataclass(frozen=True)
class PaneReport:
    """Read-only snapshot of memory-relevant state."""

    tracked_indices: int
    pane_count: int
    per_state: dict = field(compare=False)


class WindowProcessor:
    """Single-consumer engine; one instance must not be stepped concurrently.

    The expression and aggregator are immutable and may be shared across
    instances.
    """

    def __init__(
        self,
        expression: WindowExpression,
        aggregator: Aggregator,
        first_block: Iterable = (),
        debug_invariants: bool = False,
    ):
        self.expression = expression
        self.aggregator = aggregator
        block = tuple(first_block)
        k = expression.k
        if len(block) != k:
            raise PreconditionError(f"the initial block must hold exactly k={k} letters")
        for letter in block:
            if not expression.theory.contains_letter(letter):
                raise InputTypeError(f"letter {letter!r} outside the theory domain")
        self._block = deque(block, maxlen=k + 1)
        self.position = k - 1
        self.prefix_states: list[Optional[str]] = [pa.initial for pa, _ in expression.pairs]
        self.window_starts: list[dict[str, list[int]]] = [{} for _ in expression.pairs]
        self._dead = [dead_states(wa) for _, wa in expression.pairs]
        acc = aggregator.empty()
        for letter in block:
            acc = aggregator.add(acc, letter)
        self.panes: list[Pane] = [Pane(0, acc)]
        self._ended = False
        self.debug = debug_invariants
        self._shadow: list[dict[int, str]] = [{} for _ in expression.pairs]
        self._history: list = list(block) if debug_invariants else []

    # -- bookkeeping helpers

    def _min_tracked(self) -> Optional[int]:
        lo: Optional[int] = None
        for starts in self.window_starts:
            for indices in starts.values():
                if indices and (lo is None or indices[0] < lo):
                    lo = indices[0]
        return lo

    def _window_aggregate(self, start: int, end: int):
        acc = None
        for pane in self.panes:
            pane_end = pane.end if pane.end is not None else end
            if pane_end < start or pane.start > end:
                continue
            acc = pane.acc if acc is None else self.aggregator.combine(acc, pane.acc)
        if acc is None:
            raise InvariantViolation(f"no panes cover window [{start}, {end}]")
        return self.aggregator.finalize(acc)

    def pane_report(self) -> PaneReport:
        per_state: dict = {}
        total = 0
        for i, starts in enumerate(self.window_starts):
            for q, indices in starts.items():
                if indices:
                    per_state[(i, q)] = len(indices)
                    total += len(indices)
        return PaneReport(total, len(self.panes), per_state)

    # -- the main loop body

    def step(self, letter) -> list[WindowOutput]:
        if not self.expression.theory.contains_letter(letter):
            raise InputTypeError(f"letter {letter!r} outside the theory domain")
        pairs = self.expression.pairs
        n = self.position + 1
        self._block.append(letter)
        window = Valuation(tuple(self._block))
        if self.debug:
            self._history.append(letter)

        begins = [
            ps is not None and ps in pa.finals
            for (pa, _), ps in zip(pairs, self.prefix_states)
        ]

        # pane rotation covers both window begins at n and ends at n-1
        if any(begins) or self._ended:
            open_pane = self.panes[-1]
            open_pane.end = self.position
            self.panes.append(Pane(n, self.aggregator.empty()))
        open_pane = self.panes[-1]
        open_pane.acc = self.aggregator.add(open_pane.acc, letter)

        outputs: list[WindowOutput] = []
        for i, (pa, wa) in enumerate(pairs):
            if begins[i]:
                self.window_starts[i].setdefault(wa.initial, []).append(n)
            if self.prefix_states[i] is not None:
                self.prefix_states[i] = pa.successor(self.prefix_states[i], window)
            updated: dict[str, list[int]] = {}
            for q, indices in self.window_starts[i].items():
                q2 = wa.successor(q, window)
                if q2 is None:
                    continue
                if q2 in updated:
                    merged = sorted(updated[q2] + indices)
                    updated[q2] = merged
                else:
                    updated[q2] = list(indices)
            self.window_starts[i] = updated

            emitted = []
            for qf in wa.finals:
                emitted.extend(updated.get(qf, ()))
            for start in sorted(emitted):
                outputs.append(
                    WindowOutput(i, start, n, self._window_aggregate(start, n))
                )
            for qd in self._dead[i]:
                self.window_starts[i].pop(qd, None)

        outputs.sort(key=lambda o: (o.pair, o.start))
        self._ended = bool(outputs)

        lo = self._min_tracked()
        if lo is None:
            # nothing tracked: every pane is garbage, restart at the next slot
            self.panes = [Pane(n + 1, self.aggregator.empty())]
        else:
            self.panes = [p for p in self.panes if p.end is None or p.end >= lo]

        self.position = n
        if self.debug:
            self._check_invariants(window, begins)
        return outputs

    def run(self, letters: Iterable) -> list[WindowOutput]:
        out: list[WindowOutput] = []
        for letter in letters:
            out.extend(self.step(letter))
        return out

    def clone(self) -> "WindowProcessor":
        """Independent copy sharing only immutable structure."""
        twin = object.__new__(WindowProcessor)
        twin.expression = self.expression
        twin.aggregator = self.aggregator
        twin._block = deque(self._block, maxlen=self._block.maxlen)
        twin.position = self.position
        twin.prefix_states = list(self.prefix_states)
        twin.window_starts = [
            {q: list(v) for q, v in starts.items()} for starts in self.window_starts
        ]
        twin._dead = self._dead
        twin.panes = [Pane(p.start, p.acc, p.end) for p in self.panes]
        twin._ended = self._ended
        twin.debug = self.debug
        twin._shadow = [dict(s) for s in self._shadow]
        twin._history = list(self._history)
        return twin

    # -- debug mode

    def _check_invariants(self, window: Valuation, begins: list[bool]) -> None:
        pairs = self.expression.pairs
        n = self.position
        # independent per-copy simulation of every live window candidate
        for i, (pa, wa) in enumerate(pairs):
            shadow = self._shadow[i]
            advanced: dict[int, str] = {}
            for start, q in shadow.items():
                q2 = wa.successor(q, window)
                if q2 is not None:
                    advanced[start] = q2
            if begins[i]:
                q2 = wa.successor(wa.initial, window)
                if q2 is not None:
                    advanced[n] = q2
            for start in [s for s, q in advanced.items() if q in self._dead[i]]:
                del advanced[start]
            self._shadow[i] = advanced
            grouped: dict[str, list[int]] = {}
            for start, q in advanced.items():
                grouped.setdefault(q, []).append(start)
            actual = {q: sorted(v) for q, v in self.window_starts[i].items() if v}
            expected = {q: sorted(v) for q, v in grouped.items()}
            if actual != expected:
                raise InvariantViolation(
                    f"start-index map diverged from per-copy simulation for pair {i}: "
                    f"{actual} != {expected}"
                )
            for qd in self._dead[i]:
                if self.window_starts[i].get(qd):
                    raise InvariantViolation(f"dead state {qd!r} holds start indices")
        # prefix state replay (periodic; full replay is quadratic)
        if n % 512 == 0:
            for i, (pa, _) in enumerate(pairs):
                ok, trace = run_accepts(pa, tuple(self._history))
                expected_state = trace.states[-1] if trace and trace.states else None
                if self.prefix_states[i] != expected_state:
                    raise InvariantViolation(
                        f"prefix state {self.prefix_states[i]!r} != replayed "
                        f"{expected_state!r} for pair {i}"
                    )
        # pane structure: contiguous, non-overlapping, exactly one open pane
        for first, second in zip(self.panes, self.panes[1:]):
            if first.end is None or first.end + 1 != second.start:
                raise InvariantViolation("panes are not contiguous")
        if self.panes and self.panes[-1].end is not None:
            raise InvariantViolation("the last pane must be open")


def init_processor(
    expression: WindowExpression,
    aggregator: Aggregator,
    first_block: Iterable = (),
    debug_invariants: bool = False,
) -> WindowProcessor:
    return WindowProcessor(expression, aggregator, first_block, debug_invariants)


def run_stream(
    expression: WindowExpression,
    aggregator: Aggregator,
    stream: Iterable,
    debug_invariants: bool = False,
) -> list[WindowOutput]:
    """Fold ``step`` over the stream after seeding the first k letters.

    Outputs are ordered by end position, then (pair, start). Streams shorter
    than k produce no output.
    """
    letters = iter(stream)
    block = []
    k = expression.k
    while len(block) < k:
        try:
            block.append(next(letters))
        except StopIteration:
            return []
    proc = WindowProcessor(expression, aggregator, block, debug_invariants)
    return proc.run(letters)


def windows_oracle(expression: WindowExpression, word: Iterable) -> set:
    """Brute-force recognition: all (pair, start, end) with the prefix in the
    pair's prefix language and the lookback-extended segment in its window
    language. The reference the processor is tested against."""
    w = tuple(word)
    k = expression.k
    out = set()
    for i, (pa, wa) in enumerate(expression.pairs):
        for ie in range(k, len(w)):
            for ib in range(k, ie + 1):
                if run_accepts(pa, w[:ib])[0] and run_accepts(wa, w[ib - k : ie + 1])[0]:
                    out.add((i, ib, ie))
    return out
