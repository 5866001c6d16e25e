"""Task monitors: the compiled form of a specification.

A monitor is a finite graph whose transitions carry a guard over the
current environment state and register valuation, plus an update of every
register.  Registers are addressed by position; every expression below
evaluates on a single ``(state, valuation)`` pair or on a batch of them,
with the state and valuation vectors on the last axis.

``compile_spec`` builds monitors by structural recursion using four
constructions (achieve, ensuring, sequencing, choice).  Two choices made by
these constructions are worth knowing:

* In ``compile_seq`` the reward of the first monitor is copied into a fresh
  register when the bridge is taken.  If the first monitor has a single
  final state, that reward only reads registers that are never written
  again afterwards, so the register is elided and the reward expression is
  used directly.
* ``compile_ensuring`` also strengthens existing bridge guards with its
  registers, so a sequence only continues while the constraint has held.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from graphlib import CycleError, TopologicalSorter
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .lang import (
    Achieve,
    And,
    Atom,
    Choice,
    Ensuring,
    Or,
    Pred,
    PredicateRegistry,
    Seq,
    Spec,
    pred_bool,
    pred_quant,
    print_pred,
)

__all__ = [
    "INF",
    "Const",
    "Reg",
    "PredValue",
    "Min",
    "TrueGuard",
    "PredGuard",
    "PosGuard",
    "AndGuard",
    "Transition",
    "TaskMonitor",
    "MonitorError",
    "compile_achieve",
    "compile_ensuring",
    "compile_seq",
    "compile_choice",
    "compile_spec",
    "validate_monitor",
    "longest_path_depths",
    "eval_expr",
    "guard_bool",
    "guard_quant",
    "apply_update",
    "eval_reward",
    "to_dot",
    "expr_text",
    "guard_text",
    "update_text",
]

#: Stand-in for +infinity in register arithmetic.
INF = 1e6


class MonitorError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Expressions over (state, registers)


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Reg:
    index: int


@dataclass(frozen=True)
class PredValue:
    """Robustness of a predicate at the current state."""

    pred: Pred


@dataclass(frozen=True)
class Min:
    args: tuple

    @staticmethod
    def of(*args) -> "Expr":
        flat = []
        for a in args:
            flat.extend(a.args if isinstance(a, Min) else (a,))
        out = []
        for a in flat:
            if a not in out:
                out.append(a)
        # registers first, in index order, so equal minima print alike
        out.sort(key=lambda a: (0, a.index) if isinstance(a, Reg) else (1, 0))
        return out[0] if len(out) == 1 else Min(tuple(out))


Expr = Union[Const, Reg, PredValue, Min]


@dataclass(frozen=True)
class TrueGuard:
    pass


@dataclass(frozen=True)
class PredGuard:
    pred: Pred


@dataclass(frozen=True)
class PosGuard:
    """``expr > 0``; its robustness is the value of ``expr``."""

    expr: Expr


@dataclass(frozen=True)
class AndGuard:
    left: "Guard"
    right: "Guard"

    @staticmethod
    def of(left: "Guard", right: "Guard") -> "Guard":
        if isinstance(left, TrueGuard):
            return right
        if isinstance(right, TrueGuard):
            return left
        return AndGuard(left, right)


Guard = Union[TrueGuard, PredGuard, PosGuard, AndGuard]


def eval_expr(expr: Expr, s, v, registry: PredicateRegistry):
    if isinstance(expr, Reg):
        return np.asarray(v)[..., expr.index]
    if isinstance(expr, Const):
        return np.float64(expr.value)
    if isinstance(expr, PredValue):
        return pred_quant(expr.pred, s, registry)
    if isinstance(expr, Min):
        out = eval_expr(expr.args[0], s, v, registry)
        for a in expr.args[1:]:
            out = np.minimum(out, eval_expr(a, s, v, registry))
        return out
    raise TypeError(f"not an expression: {expr!r}")


def guard_bool(guard: Guard, s, v, registry: PredicateRegistry):
    if isinstance(guard, TrueGuard):
        return np.True_
    if isinstance(guard, PredGuard):
        return pred_bool(guard.pred, s, registry)
    if isinstance(guard, PosGuard):
        return eval_expr(guard.expr, s, v, registry) > 0
    if isinstance(guard, AndGuard):
        return guard_bool(guard.left, s, v, registry) & guard_bool(guard.right, s, v, registry)
    raise TypeError(f"not a guard: {guard!r}")


def guard_quant(guard: Guard, s, v, registry: PredicateRegistry):
    """Robustness of a guard: positive exactly when ``guard_bool`` holds."""
    if isinstance(guard, TrueGuard):
        return np.float64(INF)
    if isinstance(guard, PredGuard):
        return pred_quant(guard.pred, s, registry)
    if isinstance(guard, PosGuard):
        return np.asarray(eval_expr(guard.expr, s, v, registry), dtype=float)
    if isinstance(guard, AndGuard):
        return np.minimum(guard_quant(guard.left, s, v, registry), guard_quant(guard.right, s, v, registry))
    raise TypeError(f"not a guard: {guard!r}")


def _map_expr(expr, fn):
    """Rebuild ``expr`` with every ``Reg`` replaced by ``fn(reg)``."""
    if isinstance(expr, Reg):
        return fn(expr)
    if isinstance(expr, Min):
        return Min.of(*(_map_expr(a, fn) for a in expr.args))
    return expr


def _map_guard(guard, fn):
    if isinstance(guard, PosGuard):
        return PosGuard(_map_expr(guard.expr, fn))
    if isinstance(guard, AndGuard):
        return AndGuard.of(_map_guard(guard.left, fn), _map_guard(guard.right, fn))
    return guard


def _shift(offset: int):
    return lambda r: Reg(r.index + offset)


def _bind(values: Sequence[float]):
    return lambda r: Const(float(values[r.index]))


def _reads_state(expr) -> bool:
    if isinstance(expr, PredValue):
        return True
    if isinstance(expr, Min):
        return any(_reads_state(a) for a in expr.args)
    return False


def _registers(expr) -> set[int]:
    if isinstance(expr, Reg):
        return {expr.index}
    if isinstance(expr, Min):
        return set().union(*(_registers(a) for a in expr.args))
    return set()


# ---------------------------------------------------------------------------
# Monitor IR


@dataclass(frozen=True)
class Transition:
    id: int
    source: int
    target: int
    guard: Guard
    update: tuple  # one expression per register
    bridge: bool = False  # carries the "first part succeeded" guard of a sequence

    @property
    def is_self_loop(self) -> bool:
        return self.source == self.target


@dataclass(frozen=True)
class TaskMonitor:
    n_states: int
    initial: int
    registers: tuple[str, ...]
    init_values: tuple[float, ...]
    transitions: tuple[Transition, ...]
    finals: frozenset
    rewards: Mapping[int, Expr] = field(hash=False)
    state_names: tuple[str, ...] = ()
    spec: Optional[Spec] = field(default=None, compare=False)  # source specification, if compiled from one

    @property
    def n_registers(self) -> int:
        return len(self.registers)

    def outgoing(self, q: int) -> list[Transition]:
        return [t for t in self.transitions if t.source == q]

    def self_loop(self, q: int) -> Transition:
        for t in self.transitions:
            if t.source == q and t.target == q:
                return t
        raise MonitorError(f"state {q} has no self loop")

    def successors(self, q: int) -> list[Transition]:
        """Non-self outgoing transitions of ``q`` in id order."""
        return [t for t in self.transitions if t.source == q and t.target != q]

    def name(self, q: int) -> str:
        return self.state_names[q] if self.state_names else f"q{q + 1}"

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.n_states, self.initial, self.registers, self.init_values)).encode())
        for t in self.transitions:
            h.update(repr((t.id, t.source, t.target, t.guard, t.update, t.bridge)).encode())
        h.update(repr(sorted(self.finals)).encode())
        h.update(repr(sorted(self.rewards.items())).encode())
        return h.hexdigest()[:16]


def _identity(n: int) -> tuple:
    return tuple(Reg(i) for i in range(n))


def _finish(
    n_states: int,
    initial: int,
    n_registers: int,
    init_values: Sequence[float],
    transitions: Sequence[tuple],
    finals,
    rewards: Mapping[int, Expr],
    keep: Optional[Sequence[int]] = None,
) -> TaskMonitor:
    """Assemble a monitor, renumbering states and transitions canonically.

    ``transitions`` holds ``(source, target, guard, update, bridge)``.
    ``keep`` lists the old state indices that survive, in their new order.
    """
    keep = list(range(n_states)) if keep is None else list(keep)
    index = {old: new for new, old in enumerate(keep)}
    rows = sorted(
        ((index[s], index[t], g, u, b) for s, t, g, u, b in transitions),
        key=lambda row: (row[0], row[1]),
    )
    trans = tuple(Transition(i, s, t, g, tuple(u), b) for i, (s, t, g, u, b) in enumerate(rows))
    return TaskMonitor(
        n_states=len(keep),
        initial=index[initial],
        registers=tuple(f"x{i + 1}" for i in range(n_registers)),
        init_values=tuple(float(x) for x in init_values),
        transitions=trans,
        finals=frozenset(index[q] for q in finals),
        rewards={index[q]: r for q, r in rewards.items()},
    )


def _rows(m: TaskMonitor, state_offset=0, reg_offset=0, n_total=None):
    """Transitions of ``m`` shifted into a larger state/register space, with
    identity updates on the registers ``m`` does not own."""
    n_total = m.n_registers if n_total is None else n_total
    shift = _shift(reg_offset)
    for t in m.transitions:
        update = list(_identity(n_total))
        for i, e in enumerate(t.update):
            update[reg_offset + i] = _map_expr(e, shift)
        yield (t.source + state_offset, t.target + state_offset, _map_guard(t.guard, shift), update, t.bridge)


# ---------------------------------------------------------------------------
# Constructions


def compile_achieve(b: Pred) -> TaskMonitor:
    """Two states; leaving the first needs ``b`` and records its robustness."""
    transitions = [
        (0, 0, TrueGuard(), [Reg(0)], False),
        (0, 1, PredGuard(b), [PredValue(b)], False),
        (1, 1, TrueGuard(), [Reg(0)], False),
    ]
    return _finish(2, 0, 1, [0.0], transitions, {1}, {1: Reg(0)})


def _conjuncts(b: Pred) -> list[Pred]:
    if isinstance(b, And):
        return _conjuncts(b.left) + _conjuncts(b.right)
    return [b]


def compile_ensuring(m1: TaskMonitor, b: Pred, split: bool = True) -> TaskMonitor:
    """Add one min-tracking register per constraint (per top-level conjunct
    of ``b`` when ``split``) and fold it into every reward."""
    parts = _conjuncts(b) if split else [b]
    n1 = m1.n_registers
    new_regs = [Reg(n1 + k) for k in range(len(parts))]
    tracking = [Min.of(r, PredValue(p)) for r, p in zip(new_regs, parts)]
    transitions = []
    for s, t, g, u, bridge in _rows(m1):
        if bridge:
            g = _strengthen(g, new_regs)
        transitions.append((s, t, g, list(u) + tracking, bridge))
    rewards = {q: Min.of(r, *new_regs) for q, r in m1.rewards.items()}
    return _finish(
        m1.n_states, m1.initial, n1 + len(parts), list(m1.init_values) + [INF] * len(parts),
        transitions, m1.finals, rewards,
    )


def _strengthen(guard: Guard, regs: list[Reg]) -> Guard:
    if isinstance(guard, PosGuard):
        return PosGuard(Min.of(guard.expr, *regs))
    if isinstance(guard, AndGuard):
        return AndGuard(_strengthen(guard.left, regs), _strengthen(guard.right, regs))
    return guard


def compile_seq(m1: TaskMonitor, m2: TaskMonitor) -> TaskMonitor:
    """Run ``m1`` then ``m2``.

    From every final state of ``m1`` there is a bridge to each transition
    target of ``m2``'s initial state (its self loop included), guarded by
    that transition's guard at ``m2``'s initial valuation and by ``m1``'s
    reward being positive, so the hand-over costs no time step.
    """
    n1, n2 = m1.n_registers, m2.n_registers
    for r in m1.rewards.values():
        if _reads_state(r):
            raise MonitorError("sequencing needs rewards that read registers only")
    keep_r = len(m1.finals) > 1
    n_total = n1 + n2 + int(keep_r)
    x_r = Reg(n1 + n2)
    q_off = m1.n_states

    transitions = list(_rows(m1, 0, 0, n_total)) + list(_rows(m2, q_off, n1, n_total))
    to_m2 = _shift(n1)
    init2 = m2.init_values
    for q in sorted(m1.finals):
        rho1 = m1.rewards[q]
        for t in m2.outgoing(m2.initial):
            guard = AndGuard.of(_map_guard(t.guard, _bind(init2)), PosGuard(rho1))
            update = list(_identity(n_total))
            for i, e in enumerate(t.update):
                update[n1 + i] = _map_expr(_map_expr(e, _bind(init2)), to_m2)
            if keep_r:
                update[x_r.index] = rho1
            transitions.append((q, t.target + q_off, guard, update, True))

    rewards = {}
    for q, r2 in m2.rewards.items():
        rewards[q + q_off] = Min.of(_map_expr(r2, to_m2), x_r if keep_r else next(iter(m1.rewards.values())))
    init = list(m1.init_values) + list(init2) + ([0.0] if keep_r else [])
    return _finish(
        m1.n_states + m2.n_states, m1.initial, n_total, init, transitions,
        {q + q_off for q in m2.finals}, rewards,
    )


def compile_choice(m1: TaskMonitor, m2: TaskMonitor) -> TaskMonitor:
    """Merge the two initial states; the merged self loop runs both initial
    self-loop updates."""
    n1, n2 = m1.n_registers, m2.n_registers
    n_total = n1 + n2
    q_off = m1.n_states
    q0 = m1.initial
    i2 = m2.initial + q_off
    transitions = []
    loop1 = loop2 = None
    for row in list(_rows(m1, 0, 0, n_total)) + list(_rows(m2, q_off, n1, n_total)):
        s, t, g, u, b = row
        if s == q0 and t == q0:
            loop1 = u
            continue
        if s == i2 and t == i2:
            loop2 = u
            continue
        if s == i2:
            s = q0
        transitions.append((s, t, g, u, b))
    merged = list(loop1[:n1]) + list(loop2[n1:])
    transitions.append((q0, q0, TrueGuard(), merged, False))

    rewards = dict(m1.rewards)
    shift = _shift(n1)
    rewards.update({q + q_off: _map_expr(r, shift) for q, r in m2.rewards.items()})
    finals = set(m1.finals) | {q + q_off for q in m2.finals}
    keep = [q0] + [q for q in range(m1.n_states + m2.n_states) if q not in (q0, i2)]
    return _finish(
        m1.n_states + m2.n_states, q0, n_total, list(m1.init_values) + list(m2.init_values),
        transitions, finals, rewards, keep=keep,
    )


def compile_spec(spec: Spec, split_conjuncts: bool = True) -> TaskMonitor:
    """Compile ``spec``; the result remembers its source as ``.spec``."""
    return replace(_compile(spec, split_conjuncts), spec=spec)


def _compile(spec: Spec, split_conjuncts: bool) -> TaskMonitor:
    if isinstance(spec, Achieve):
        return compile_achieve(spec.pred)
    if isinstance(spec, Ensuring):
        return compile_ensuring(_compile(spec.spec, split_conjuncts), spec.pred, split_conjuncts)
    if isinstance(spec, Seq):
        return compile_seq(_compile(spec.first, split_conjuncts), _compile(spec.second, split_conjuncts))
    if isinstance(spec, Choice):
        return compile_choice(_compile(spec.left, split_conjuncts), _compile(spec.right, split_conjuncts))
    raise TypeError(f"not a specification node: {spec!r}")


# ---------------------------------------------------------------------------
# Structural checks


def _expr_ok(expr, n_registers: int) -> bool:
    return all(0 <= i < n_registers for i in _registers(expr))


def _guard_regs(guard) -> set[int]:
    if isinstance(guard, PosGuard):
        return _registers(guard.expr)
    if isinstance(guard, AndGuard):
        return _guard_regs(guard.left) | _guard_regs(guard.right)
    return set()


def validate_monitor(m: TaskMonitor) -> list[str]:
    """Return a list of violated structural properties (empty if valid)."""
    problems = []
    n = m.n_states
    if not 0 <= m.initial < n:
        problems.append(f"initial state {m.initial} out of range")
        return problems
    if len(m.init_values) != m.n_registers:
        problems.append("initial valuation does not cover every register")
    for t in m.transitions:
        if not (0 <= t.source < n and 0 <= t.target < n):
            problems.append(f"transition {t.id} has an endpoint out of range")
            return problems
        if len(t.update) != m.n_registers:
            problems.append(f"transition {t.id} does not update every register")
        elif not all(_expr_ok(e, m.n_registers) for e in t.update):
            problems.append(f"transition {t.id} reads an unknown register")
        if not all(0 <= i < m.n_registers for i in _guard_regs(t.guard)):
            problems.append(f"transition {t.id} guard reads an unknown register")

    pairs: dict[tuple[int, int], int] = {}
    for t in m.transitions:
        pairs[(t.source, t.target)] = pairs.get((t.source, t.target), 0) + 1
    for (s, t), count in sorted(pairs.items()):
        if count > 1:
            problems.append(f"{count} transitions from {m.name(s)} to {m.name(t)} (at most one allowed)")

    for q in range(n):
        loops = [t for t in m.transitions if t.source == q and t.target == q]
        if not loops:
            problems.append(f"missing self loop on {m.name(q)}")
        elif not any(isinstance(t.guard, TrueGuard) for t in loops):
            problems.append(f"self loop on {m.name(q)} is not guarded by true")

    succ = {q: sorted({t.target for t in m.transitions if t.source == q and t.target != q}) for q in range(n)}
    try:
        tuple(TopologicalSorter({q: succ[q] for q in range(n)}).static_order())
    except CycleError as e:
        cycle = " -> ".join(m.name(q) for q in e.args[1])
        problems.append(f"cycle beyond self loop: {cycle}")

    sinks = {q for q in range(n) if not succ[q]}
    if sinks != set(m.finals):
        problems.append(
            f"final states {sorted(m.name(q) for q in m.finals)} differ from sink states {sorted(m.name(q) for q in sinks)}"
        )
    if set(m.rewards) != set(m.finals):
        problems.append("reward map is not defined on exactly the final states")
    elif not all(_expr_ok(r, m.n_registers) for r in m.rewards.values()):
        problems.append("reward reads an unknown register")

    reach = _closure(m.initial, succ)
    for q in range(n):
        if q not in reach:
            problems.append(f"{m.name(q)} is unreachable from the initial state")
        elif not (_closure(q, succ) & set(m.finals)):
            problems.append(f"no final state is reachable from {m.name(q)}")
    return problems


def _closure(start: int, succ: Mapping[int, list[int]]) -> set[int]:
    seen, stack = {start}, [start]
    while stack:
        for r in succ[stack.pop()]:
            if r not in seen:
                seen.add(r)
                stack.append(r)
    return seen


def longest_path_depths(m: TaskMonitor) -> tuple[dict[int, int], int]:
    """Longest-path distance from the initial state to every state, ignoring
    self loops, and its maximum."""
    preds: dict[int, set[int]] = {q: set() for q in range(m.n_states)}
    for t in m.transitions:
        if t.source != t.target:
            preds[t.target].add(t.source)
    try:
        order = list(TopologicalSorter(preds).static_order())
    except CycleError as e:
        raise MonitorError(f"monitor graph has a cycle: {e.args[1]}") from None
    depth: dict[int, int] = {}
    for q in order:
        if q == m.initial:
            depth[q] = 0
        elif preds[q]:
            known = [depth[p] for p in preds[q] if p in depth]
            if known:
                depth[q] = max(known) + 1
    if len(depth) != m.n_states:
        raise MonitorError("monitor has states unreachable from the initial state")
    return depth, max(depth.values())


# ---------------------------------------------------------------------------
# Evaluation helpers


def apply_update(t: Transition, s, v, registry: PredicateRegistry) -> np.ndarray:
    """``u(s, v)`` for transition ``t``; ``v`` may be a batch ``(B, X)``."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    for i, e in enumerate(t.update):
        if isinstance(e, Reg) and e.index == i:
            out[..., i] = v[..., i]
        else:
            out[..., i] = eval_expr(e, s, v, registry)
    return out


def eval_reward(m: TaskMonitor, q: int, s, v, registry: PredicateRegistry):
    return eval_expr(m.rewards[q], s, v, registry)


# ---------------------------------------------------------------------------
# Rendering


def _fmt(x: float) -> str:
    if x >= INF:
        return "∞"
    return f"{x:g}"


def expr_text(expr, registers: Sequence[str]) -> str:
    if isinstance(expr, Reg):
        return registers[expr.index]
    if isinstance(expr, Const):
        return _fmt(expr.value)
    if isinstance(expr, PredValue):
        return f"[{print_pred(expr.pred)}]"
    return "min{" + ", ".join(expr_text(a, registers) for a in expr.args) + "}"


def guard_text(guard, registers: Sequence[str]) -> str:
    if isinstance(guard, TrueGuard):
        return "true"
    if isinstance(guard, PredGuard):
        return print_pred(guard.pred)
    if isinstance(guard, PosGuard):
        return f"{expr_text(guard.expr, registers)} > 0"
    return f"{guard_text(guard.left, registers)} ∧ {guard_text(guard.right, registers)}"


def update_text(t: Transition, registers: Sequence[str]) -> list[str]:
    return [
        f"{registers[i]} ← {expr_text(e, registers)}"
        for i, e in enumerate(t.update)
        if not (isinstance(e, Reg) and e.index == i)
    ]


def to_dot(m: TaskMonitor) -> str:
    """Graphviz rendering, with rewards on final states and guards/updates
    on edges."""
    regs = m.registers

    def esc(text: str) -> str:
        return text.replace("\\", "\\\\").replace('"', '\\"')

    lines = ["digraph monitor {", "  rankdir=LR;", '  start [shape=point];']
    for q in range(m.n_states):
        if q in m.finals:
            label = f"{m.name(q)}\\nρ: {esc(expr_text(m.rewards[q], regs))}"
            lines.append(f'  {m.name(q)} [shape=doublecircle, label="{label}"];')
        else:
            lines.append(f"  {m.name(q)} [shape=circle];")
    init = ", ".join(f"{r} ← {_fmt(x)}" for r, x in zip(regs, m.init_values))
    lines.append(f'  start -> {m.name(m.initial)} [label="{esc(init)}"];')
    for t in m.transitions:
        parts = [] if t.is_self_loop else [f"Σ: {guard_text(t.guard, regs)}"]
        parts += update_text(t, regs)
        label = "\\n".join(esc(p) for p in parts)
        lines.append(f'  {m.name(t.source)} -> {m.name(t.target)} [label="{label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
