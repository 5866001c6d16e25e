"""Boolean and quantitative semantics of specifications over finite rollouts.

Index convention: on a rollout ``s_0 .. s_t`` the ``achieve`` and
``ensuring`` operators range over ``i < t``; the last state ``s_t`` is never
inspected.  Sequencing splits at ``i < t`` into ``s_0..s_i`` and ``s_i..s_t``.

Two evaluators are provided.  ``eval_bool``/``eval_quant`` are the direct
recursive definitions with memoisation over ``(node, i, j)`` windows; they
are the reference oracle.  ``window_bool``/``window_quant`` compute the
same values for every window of a whole batch of rollouts at once with
numpy, and are what training and evaluation use.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .lang import Achieve, Choice, Ensuring, PredicateRegistry, Seq, Spec, pred_bool, pred_quant

__all__ = [
    "Rollout",
    "eval_bool",
    "eval_quant",
    "window_bool",
    "window_quant",
    "batch_eval_bool",
    "batch_eval_quant",
]


@dataclass(frozen=True)
class Rollout:
    """States ``s_0..s_t`` (shape ``(t+1, n)``) and actions ``a_0..a_{t-1}``."""

    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        actions = np.asarray(self.actions, dtype=float)
        if actions.ndim == 1:
            actions = actions.reshape(len(actions), -1) if len(actions) else np.zeros((0, 0))
        if len(states) < 1:
            raise ValueError("a rollout has at least one state")
        if len(actions) != len(states) - 1:
            raise ValueError(f"expected {len(states) - 1} actions for {len(states)} states, got {len(actions)}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    @property
    def length(self) -> int:
        return len(self.states) - 1

    def window(self, i: int, j: int) -> "Rollout":
        """The sub-rollout ``s_i .. s_j``."""
        return Rollout(self.states[i : j + 1], self.actions[i:j])


def _pred_table(spec: Spec, states, registry, fn, cache):
    key = id(spec.pred)
    if key not in cache:
        cache[key] = fn(spec.pred, states, registry)
    return cache[key]


def eval_bool(spec: Spec, zeta: Rollout, registry: PredicateRegistry) -> bool:
    states = zeta.states
    values: dict[int, np.ndarray] = {}

    @lru_cache(maxsize=None)
    def sat(node: Spec, i: int, j: int) -> bool:
        if isinstance(node, Achieve):
            b = _pred_table(node, states, registry, pred_bool, values)
            return bool(np.any(b[i:j]))
        if isinstance(node, Ensuring):
            b = _pred_table(node, states, registry, pred_bool, values)
            return sat(node.spec, i, j) and bool(np.all(b[i:j]))
        if isinstance(node, Seq):
            return any(sat(node.first, i, m) and sat(node.second, m, j) for m in range(i, j))
        if isinstance(node, Choice):
            return sat(node.left, i, j) or sat(node.right, i, j)
        raise TypeError(f"not a specification node: {node!r}")

    return sat(spec, 0, zeta.length)


def eval_quant(spec: Spec, zeta: Rollout, registry: PredicateRegistry) -> float:
    """Robustness of ``zeta`` against ``spec``.

    Raises ``ValueError`` on a single-state rollout, where the value is a
    maximum over an empty set.  Sub-windows of length zero evaluate to
    ``-inf`` internally, so a rollout too short for a sequence also yields
    ``-inf``.
    """
    if zeta.length < 1:
        raise ValueError("quantitative semantics is undefined on a rollout of length 0")
    states = zeta.states
    values: dict[int, np.ndarray] = {}

    @lru_cache(maxsize=None)
    def rob(node: Spec, i: int, j: int) -> float:
        if isinstance(node, Achieve):
            q = _pred_table(node, states, registry, pred_quant, values)
            return float(np.max(q[i:j])) if j > i else -np.inf
        if isinstance(node, Ensuring):
            q = _pred_table(node, states, registry, pred_quant, values)
            inner = rob(node.spec, i, j)
            return min(inner, float(np.min(q[i:j]))) if j > i else inner
        if isinstance(node, Seq):
            return max((min(rob(node.first, i, m), rob(node.second, m, j)) for m in range(i, j)), default=-np.inf)
        if isinstance(node, Choice):
            return max(rob(node.left, i, j), rob(node.right, i, j))
        raise TypeError(f"not a specification node: {node!r}")

    return rob(spec, 0, zeta.length)


# ---------------------------------------------------------------------------
# Batched window tables.  Entry [b, i, j] holds the value on s_i..s_j of
# rollout b; entries with j <= i hold False / -inf.


def _upper(n: int) -> np.ndarray:
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def window_bool(spec: Spec, states, registry: PredicateRegistry) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    if states.ndim == 2:
        states = states[None]
    n = states.shape[1]
    upper = _upper(n)

    def table(node: Spec) -> np.ndarray:
        if isinstance(node, (Achieve, Ensuring)):
            b = pred_bool(node.pred, states[:, :-1], registry)  # (B, n-1)
            b = np.broadcast_to(b, states.shape[:1] + (n - 1,))
            if isinstance(node, Achieve):
                c = np.concatenate([np.zeros((len(b), 1)), np.cumsum(b, axis=1)], axis=1)
                return (c[:, None, :] - c[:, :, None] > 0) & upper
            bad = np.concatenate([np.zeros((len(b), 1)), np.cumsum(~b, axis=1)], axis=1)
            return table(node.spec) & (bad[:, None, :] - bad[:, :, None] == 0)
        if isinstance(node, Seq):
            first = table(node.first).astype(np.float64)
            second = table(node.second).astype(np.float64)
            return (first @ second) > 0
        if isinstance(node, Choice):
            return table(node.left) | table(node.right)
        raise TypeError(f"not a specification node: {node!r}")

    return table(spec)


def window_quant(spec: Spec, states, registry: PredicateRegistry) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    if states.ndim == 2:
        states = states[None]
    batch, n = states.shape[:2]

    def running(q: np.ndarray, op) -> np.ndarray:
        # out[b, i, j] = op-reduction of q[b, i:j] for j > i
        out = np.full((batch, n, n), np.nan)
        for i in range(n - 1):
            out[:, i, i + 1 :] = op.accumulate(q[:, i:], axis=1)
        return out

    def table(node: Spec) -> np.ndarray:
        if isinstance(node, (Achieve, Ensuring)):
            q = pred_quant(node.pred, states[:, :-1], registry)
            q = np.broadcast_to(q, (batch, n - 1))
            if isinstance(node, Achieve):
                return np.nan_to_num(running(q, np.maximum), nan=-np.inf)
            inner = table(node.spec)
            worst = np.nan_to_num(running(q, np.minimum), nan=np.inf)
            return np.minimum(inner, worst)
        if isinstance(node, Seq):
            first, second = table(node.first), table(node.second)
            out = np.full((batch, n, n), -np.inf)
            for m in range(n):
                np.maximum(out, np.minimum(first[:, :, m, None], second[:, None, m, :]), out=out)
            return out
        if isinstance(node, Choice):
            return np.maximum(table(node.left), table(node.right))
        raise TypeError(f"not a specification node: {node!r}")

    return table(spec)


def batch_eval_bool(spec: Spec, states, registry: PredicateRegistry) -> np.ndarray:
    """``eval_bool`` for a batch of equal-length rollouts, shape ``(B, t+1, n)``."""
    return window_bool(spec, states, registry)[:, 0, -1]


def batch_eval_quant(spec: Spec, states, registry: PredicateRegistry) -> np.ndarray:
    states = np.asarray(states)
    if states.shape[-2] < 2:
        raise ValueError("quantitative semantics is undefined on a rollout of length 0")
    return window_quant(spec, states, registry)[:, 0, -1]
