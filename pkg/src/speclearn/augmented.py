"""The product of an environment with a task monitor.

An augmented state is ``(s, q, v)``: environment state, monitor state and
register valuation.  An augmented action pairs an environment action with
the id of an enabled monitor transition.  Register updates read the
environment state *before* the step.

Rollout rewards come in two flavours: ``terminal_reward`` is the monitor's
reward when the rollout ends in a final state and ``None`` (bottom)
otherwise; ``shaped_reward`` is total and preserves the ordering of
terminal rewards.

Single-rollout functions are written directly from the definitions; the
``batch_*`` methods of :class:`AugmentedMDP` compute the same quantities
for whole batches with numpy and are what training uses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .lang import atoms
from .monitor import (
    AndGuard,
    Min,
    PosGuard,
    PredGuard,
    PredValue,
    TaskMonitor,
    apply_update,
    eval_reward,
    guard_bool,
    guard_quant,
    longest_path_depths,
)

logger = logging.getLogger(__name__)

__all__ = [
    "AugmentedState",
    "AugmentedAction",
    "AugmentedRollout",
    "RolloutBatch",
    "ShapingConstants",
    "AugmentedMDP",
    "ProjectedPolicy",
    "compute_shaping",
    "project_policy",
    "write_trace",
    "read_trace",
]


@dataclass(frozen=True)
class AugmentedState:
    env_state: np.ndarray
    monitor_state: int
    valuation: np.ndarray


@dataclass(frozen=True)
class AugmentedAction:
    env_action: np.ndarray
    transition: int


@dataclass
class AugmentedRollout:
    """``T+1`` augmented states and ``T`` augmented actions."""

    env_states: np.ndarray  # (T+1, n)
    monitor_states: np.ndarray  # (T+1,)
    valuations: np.ndarray  # (T+1, X)
    env_actions: np.ndarray  # (T, m)
    transitions: np.ndarray  # (T,)

    @property
    def length(self) -> int:
        return len(self.monitor_states) - 1

    def state(self, i: int) -> AugmentedState:
        return AugmentedState(self.env_states[i], int(self.monitor_states[i]), self.valuations[i])


@dataclass
class RolloutBatch:
    """A batch of equal-length augmented rollouts (leading axis = rollout)."""

    env_states: np.ndarray  # (B, T+1, n)
    monitor_states: np.ndarray  # (B, T+1)
    valuations: np.ndarray  # (B, T+1, X)
    env_actions: np.ndarray  # (B, T, m)
    transitions: np.ndarray  # (B, T)

    def __len__(self) -> int:
        return len(self.monitor_states)

    def __getitem__(self, b: int) -> AugmentedRollout:
        return AugmentedRollout(
            self.env_states[b], self.monitor_states[b], self.valuations[b], self.env_actions[b], self.transitions[b]
        )


@dataclass(frozen=True)
class ShapingConstants:
    c_lower: float
    c_upper: float
    depths: dict
    max_depth: int

    def __post_init__(self):
        if self.c_upper < 0:
            raise ValueError("c_upper must be non-negative")


def compute_shaping(monitor: TaskMonitor, env, c_lower=None, c_upper=None) -> ShapingConstants:
    """Shaping constants for ``monitor`` over ``env``.

    ``c_upper`` bounds ``|alpha|``: every guard robustness is a predicate
    robustness or a minimum of registers holding predicate robustness, so
    the largest predicate bound over ``env.state_bounds()`` is used.  Every
    final reward is a minimum of such registers, so ``c_lower`` defaults to
    one below ``-c_upper``.
    """
    depths, max_depth = longest_path_depths(monitor)
    if c_upper is None:
        lo, hi = env.state_bounds()
        bound = 1.0
        for atom in _monitor_atoms(monitor):
            decl = env.predicates[atom.name]
            if decl.bound is None:
                raise ValueError(f"predicate {atom.name!r} has no robustness bound; pass c_upper explicitly")
            bound = max(bound, float(decl.bound(lo, hi, *atom.params)))
        c_upper = bound
    if c_lower is None:
        c_lower = -c_upper - 1.0
    return ShapingConstants(float(c_lower), float(c_upper), depths, max_depth)


def _monitor_atoms(monitor: TaskMonitor):
    found = []

    def expr(e):
        if isinstance(e, PredValue):
            found.extend(atoms(e.pred))
        elif isinstance(e, Min):
            for a in e.args:
                expr(a)

    def guard(g):
        if isinstance(g, PredGuard):
            found.extend(atoms(g.pred))
        elif isinstance(g, PosGuard):
            expr(g.expr)
        elif isinstance(g, AndGuard):
            guard(g.left)
            guard(g.right)

    for t in monitor.transitions:
        guard(t.guard)
        for e in t.update:
            expr(e)
    for r in monitor.rewards.values():
        expr(r)
    return list(dict.fromkeys(found))


class AugmentedMDP:
    """Environment x monitor."""

    def __init__(self, env, monitor: TaskMonitor, shaping: Optional[ShapingConstants] = None):
        self.env = env
        self.monitor = monitor
        self.registry = env.predicates
        self.shaping = shaping if shaping is not None else compute_shaping(monitor, env)
        self.init_values = np.asarray(monitor.init_values, dtype=float)
        trans = monitor.transitions
        self.sources = np.array([t.source for t in trans])
        self.targets = np.array([t.target for t in trans])
        self.self_loop_ids = np.array([monitor.self_loop(q).id for q in range(monitor.n_states)])
        self.is_final = np.array([q in monitor.finals for q in range(monitor.n_states)])
        self.depth = np.array([self.shaping.depths[q] for q in range(monitor.n_states)])
        self.alpha_violations = 0

    # -- single augmented states ------------------------------------------

    def reset(self, rng=None) -> AugmentedState:
        return AugmentedState(self.env.reset(None, rng), self.monitor.initial, self.init_values.copy())

    def enabled_transitions(self, state: AugmentedState) -> list[int]:
        return [
            t.id
            for t in self.monitor.outgoing(state.monitor_state)
            if bool(guard_bool(t.guard, state.env_state, state.valuation, self.registry))
        ]

    def step(self, state: AugmentedState, action: AugmentedAction, rng=None) -> AugmentedState:
        t = self.monitor.transitions[action.transition]
        if t.source != state.monitor_state or not guard_bool(t.guard, state.env_state, state.valuation, self.registry):
            raise ValueError(f"transition {action.transition} is not enabled in monitor state {state.monitor_state}")
        valuation = apply_update(t, state.env_state, state.valuation, self.registry)
        env_state = self.env.step(state.env_state, action.env_action, rng)
        return AugmentedState(env_state, t.target, valuation)

    def alpha(self, state: AugmentedState) -> float:
        q = state.monitor_state
        if q in self.monitor.finals:
            raise ValueError("alpha is undefined on final monitor states")
        return max(
            float(guard_quant(t.guard, state.env_state, state.valuation, self.registry))
            for t in self.monitor.successors(q)
        )

    def terminal_reward(self, rollout: AugmentedRollout) -> Optional[float]:
        """Monitor reward at the last state, or ``None`` if it is not final."""
        last = rollout.state(rollout.length)
        if last.monitor_state not in self.monitor.finals:
            return None
        return float(eval_reward(self.monitor, last.monitor_state, last.env_state, last.valuation, self.registry))

    def shaped_reward(self, rollout: AugmentedRollout) -> float:
        reward = self.terminal_reward(rollout)
        if reward is not None:
            return reward
        c = self.shaping
        qs = rollout.monitor_states
        T = rollout.length
        q_last = int(qs[T])
        i = T
        while i > 0 and qs[i - 1] == q_last:
            i -= 1
        # when the last state was entered on the final step there is no
        # j in [i, T); the last augmented state is used instead
        js = range(i, T) if i < T else [T]
        best = max(self.alpha(rollout.state(j)) for j in js)
        return best + 2 * c.c_upper * (c.depths[q_last] - c.max_depth) + c.c_lower

    def unshaped_reward(self, rollout: AugmentedRollout) -> float:
        """Terminal reward with bottom replaced by ``c_lower``."""
        reward = self.terminal_reward(rollout)
        return self.shaping.c_lower if reward is None else reward

    # -- batches ------------------------------------------------------------

    def enabled_mask(self, s, q, v) -> np.ndarray:
        """``(B, n_transitions)`` mask of transitions enabled at each row."""
        mask = np.zeros((len(q), len(self.monitor.transitions)), dtype=bool)
        for t in self.monitor.transitions:
            rows = np.flatnonzero(q == t.source)
            if rows.size:
                mask[rows, t.id] = guard_bool(t.guard, s[rows], v[rows], self.registry)
        return mask

    def batch_update(self, s, v, tids) -> np.ndarray:
        out = v.copy()
        for tid in np.unique(tids):
            rows = np.flatnonzero(tids == tid)
            out[rows] = apply_update(self.monitor.transitions[tid], s[rows], v[rows], self.registry)
        return out

    def rollout(self, controller: Callable, n: int, rng, horizon: Optional[int] = None, env_states=None) -> RolloutBatch:
        """Simulate ``n`` rollouts.

        ``controller(s, q, v, mask)`` returns ``(env_actions, transition_ids)``
        for the batch; the chosen transitions must be enabled.
        """
        T = self.env.horizon if horizon is None else horizon
        s = self.env.reset(n, rng) if env_states is None else np.asarray(env_states, dtype=float)
        q = np.full(n, self.monitor.initial)
        v = np.tile(self.init_values, (n, 1))
        S, Q, V, A, D = [s], [q], [v], [], []
        for _ in range(T):
            mask = self.enabled_mask(s, q, v)
            a, tids = controller(s, q, v, mask)
            tids = np.asarray(tids)
            if not np.all(mask[np.arange(n), tids]):
                raise ValueError("controller chose a disabled transition")
            v = self.batch_update(s, v, tids)
            q = self.targets[tids]
            s = self.env.step(s, a, rng)
            S.append(s), Q.append(q), V.append(v), A.append(np.asarray(a, dtype=float).reshape(n, -1)), D.append(tids)
        A = np.stack(A, axis=1) if A else np.zeros((n, 0, getattr(self.env, "action_dim", 1)))
        D = np.stack(D, axis=1) if D else np.zeros((n, 0), dtype=int)
        return RolloutBatch(np.stack(S, 1), np.stack(Q, 1), np.stack(V, 1), A, D)

    def batch_terminal(self, batch: RolloutBatch) -> tuple[np.ndarray, np.ndarray]:
        """``(reached_final, reward)``; reward is NaN where no final state was reached."""
        q = batch.monitor_states[:, -1]
        s = batch.env_states[:, -1]
        v = batch.valuations[:, -1]
        reached = self.is_final[q]
        reward = np.full(len(q), np.nan)
        for f in self.monitor.finals:
            rows = np.flatnonzero(q == f)
            if rows.size:
                reward[rows] = eval_reward(self.monitor, f, s[rows], v[rows], self.registry)
        return reached, reward

    def batch_alpha(self, s, q_state: int, v) -> np.ndarray:
        """alpha at monitor state ``q_state`` for arrays of env states/valuations."""
        out = None
        for t in self.monitor.successors(q_state):
            val = np.broadcast_to(guard_quant(t.guard, s, v, self.registry), s.shape[:-1])
            out = val if out is None else np.maximum(out, val)
        return out

    def batch_shaped(self, batch: RolloutBatch) -> np.ndarray:
        reached, reward = self.batch_terminal(batch)
        c = self.shaping
        qs = batch.monitor_states
        T = qs.shape[1] - 1
        q_last = qs[:, -1]
        # first index of the final run of equal monitor states
        same = qs == q_last[:, None]
        run = np.cumprod(same[:, ::-1], axis=1).sum(axis=1)  # length of trailing run, >= 1
        start = T + 1 - run
        out = reward.copy()
        j = np.arange(T)
        for q in np.unique(q_last[~reached]):
            rows = np.flatnonzero((q_last == q) & ~reached)
            alpha = self.batch_alpha(batch.env_states[rows, :T], int(q), batch.valuations[rows, :T])
            alpha = np.where(j[None, :] >= start[rows, None], alpha, -np.inf)
            best = alpha.max(axis=1)
            empty = start[rows] == T
            if np.any(empty):
                last = self.batch_alpha(batch.env_states[rows[empty], T], int(q), batch.valuations[rows[empty], T])
                best[empty] = last
            self._check_alpha(best)
            out[rows] = best + 2 * c.c_upper * (self.depth[q] - c.max_depth) + c.c_lower
        final_rewards = reward[reached]
        if final_rewards.size and np.any(final_rewards <= c.c_lower):
            logger.warning("observed %d final reward(s) <= c_lower", int(np.sum(final_rewards <= c.c_lower)))
        return out

    def batch_unshaped(self, batch: RolloutBatch) -> np.ndarray:
        reached, reward = self.batch_terminal(batch)
        return np.where(reached, reward, self.shaping.c_lower)

    def _check_alpha(self, values: np.ndarray) -> None:
        bad = int(np.sum(np.abs(values) > self.shaping.c_upper))
        if bad:
            self.alpha_violations += bad
            logger.warning("%d alpha value(s) exceed c_upper=%g", bad, self.shaping.c_upper)


class ProjectedPolicy:
    """Environment policy obtained from an augmented policy by carrying the
    monitor state and registers as internal memory."""

    def __init__(self, act: Callable[[AugmentedState], AugmentedAction], mdp: AugmentedMDP):
        self._act = act
        self.mdp = mdp
        self.reset()

    def reset(self) -> None:
        self.monitor_state = self.mdp.monitor.initial
        self.valuation = self.mdp.init_values.copy()

    def __call__(self, env_state) -> np.ndarray:
        state = AugmentedState(np.asarray(env_state, dtype=float), self.monitor_state, self.valuation)
        action = self._act(state)
        t = self.mdp.monitor.transitions[action.transition]
        if action.transition not in self.mdp.enabled_transitions(state):
            raise ValueError(f"policy chose disabled transition {action.transition}")
        self.valuation = apply_update(t, state.env_state, self.valuation, self.mdp.registry)
        self.monitor_state = t.target
        return action.env_action


def project_policy(policy, mdp: AugmentedMDP) -> ProjectedPolicy:
    """Environment policy with monitor memory, from an augmented policy.

    ``policy`` is either a callable ``AugmentedState -> AugmentedAction``
    or a :class:`~speclearn.policy.PolicyModuleSet`.
    """
    if not callable(policy):
        from .policy import act

        modules = policy
        policy = lambda state: act(modules, state, mdp)  # noqa: E731
    return ProjectedPolicy(policy, mdp)


# ---------------------------------------------------------------------------
# Trace files: one tab-separated line per step
#   t, env state..., monitor state, registers..., transition id, env action...
# The last line (t = T) has '-' for the transition and the action.


def write_trace(rollout: AugmentedRollout, fh) -> None:
    T = rollout.length
    m = rollout.env_actions.shape[-1] if rollout.env_actions.size else 0
    for t in range(T + 1):
        fields = [str(t)]
        fields += [repr(float(x)) for x in rollout.env_states[t]]
        fields.append(str(int(rollout.monitor_states[t])))
        fields += [repr(float(x)) for x in rollout.valuations[t]]
        if t < T:
            fields.append(str(int(rollout.transitions[t])))
            fields += [repr(float(x)) for x in rollout.env_actions[t]]
        else:
            fields += ["-"] * (1 + m)
        fh.write("\t".join(fields) + "\n")


def read_trace(fh, state_dim: int, n_registers: int) -> AugmentedRollout:
    rows = [line.rstrip("\n").split("\t") for line in fh if line.strip() and not line.startswith("#")]
    if not rows:
        raise ValueError("empty trace")
    S, Q, V, D, A = [], [], [], [], []
    for k, row in enumerate(rows):
        if int(row[0]) != k:
            raise ValueError(f"trace line {k + 1}: expected step {k}, found {row[0]}")
        pos = 1
        S.append([float(x) for x in row[pos : pos + state_dim]])
        pos += state_dim
        Q.append(int(row[pos]))
        pos += 1
        V.append([float(x) for x in row[pos : pos + n_registers]])
        pos += n_registers
        if k < len(rows) - 1:
            D.append(int(row[pos]))
            A.append([float(x) for x in row[pos + 1 :]])
    m = len(A[0]) if A else 0
    return AugmentedRollout(
        np.array(S), np.array(Q), np.array(V).reshape(len(rows), n_registers),
        np.array(A).reshape(len(A), m), np.array(D, dtype=int),
    )
