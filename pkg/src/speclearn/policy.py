"""Per-monitor-state neural policies.

A :class:`PolicyModuleSet` holds one small MLP per monitor state.  The
module for state ``q`` sees the environment state and the (clipped)
registers, and outputs ``m + k`` values in ``(-1, 1)``: an environment
action of width ``m`` and one score per non-self outgoing transition of
``q`` (``k`` of them).  The self loop always scores 0, so a transition is
only taken when the network pushes its score above zero and its guard
holds.

All parameters live in one flat vector so that random search can perturb
them together.  The batched forward pass takes a matrix of parameter
vectors and an index per row, which lets many perturbed policies be rolled
out in one batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .augmented import AugmentedAction, AugmentedMDP, AugmentedState
from .monitor import TaskMonitor

__all__ = ["PolicyModuleSet", "act", "save_policy", "load_policy", "CHECKPOINT_VERSION"]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class _Layer:
    w: slice
    b: slice
    shape: tuple[int, int]


@dataclass(frozen=True)
class _Module:
    layers: tuple[_Layer, ...]
    n_transitions: int
    params: slice  # span of this module inside the flat vector


class PolicyModuleSet:
    """MLP modules ``N_q`` for every monitor state ``q``.

    With ``memoryless=True`` there is a single module that reads the
    environment state only and emits environment actions only (the
    baseline architecture).
    """

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        n_registers: int,
        out_degrees: list[int],
        hidden: tuple[int, ...] = (30, 30),
        memoryless: bool = False,
        register_clip: float = 10.0,
        input_shift=None,
        input_scale=None,
        action_low=None,
        action_high=None,
    ):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.n_registers = 0 if memoryless else n_registers
        self.out_degrees = [0] if memoryless else list(out_degrees)
        self.hidden = tuple(hidden)
        self.memoryless = memoryless
        self.register_clip = register_clip
        self.input_shift = np.zeros(state_dim) if input_shift is None else np.asarray(input_shift, float)
        self.input_scale = np.ones(state_dim) if input_scale is None else np.asarray(input_scale, float)
        self.action_low = -np.ones(action_dim) if action_low is None else np.asarray(action_low, float)
        self.action_high = np.ones(action_dim) if action_high is None else np.asarray(action_high, float)

        in_dim = state_dim + self.n_registers
        modules = []
        pos = 0
        for k in self.out_degrees:
            start = pos
            sizes = (in_dim, *self.hidden, action_dim + k)
            layers = []
            for a, b in zip(sizes[:-1], sizes[1:]):
                w = slice(pos, pos + a * b)
                pos += a * b
                bias = slice(pos, pos + b)
                pos += b
                layers.append(_Layer(w, bias, (a, b)))
            modules.append(_Module(tuple(layers), k, slice(start, pos)))
        self.modules = modules
        self.n_params = pos
        self.params = np.zeros(pos)

    @classmethod
    def for_monitor(cls, mdp: AugmentedMDP, hidden=(30, 30), **kwargs) -> "PolicyModuleSet":
        m = mdp.monitor
        degrees = [len(m.successors(q)) for q in range(m.n_states)]
        env = mdp.env
        return cls(
            env.state_dim, env.action_dim, m.n_registers, degrees, hidden=hidden,
            action_low=getattr(env, "action_low", None), action_high=getattr(env, "action_high", None), **kwargs,
        )

    @classmethod
    def memoryless_for(cls, env, hidden=(50, 50), **kwargs) -> "PolicyModuleSet":
        return cls(
            env.state_dim, env.action_dim, 0, [0], hidden=hidden, memoryless=True,
            action_low=getattr(env, "action_low", None), action_high=getattr(env, "action_high", None), **kwargs,
        )

    def init_params(self, rng, output_scale: float = 0.1) -> np.ndarray:
        """Glorot-uniform weights, zero biases, a damped output layer."""
        theta = np.zeros(self.n_params)
        for mod in self.modules:
            for i, layer in enumerate(mod.layers):
                fan_in, fan_out = layer.shape
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                if i == len(mod.layers) - 1:
                    limit *= output_scale
                theta[layer.w] = rng.uniform(-limit, limit, size=fan_in * fan_out)
        self.params = theta
        return theta

    def copy(self, params: Optional[np.ndarray] = None) -> "PolicyModuleSet":
        other = object.__new__(PolicyModuleSet)
        other.__dict__.update(self.__dict__)
        other.params = np.array(self.params if params is None else params, dtype=float)
        return other

    # -- forward ------------------------------------------------------------

    def features(self, s, v=None) -> np.ndarray:
        x = (np.asarray(s, dtype=float) - self.input_shift) / self.input_scale
        if self.n_registers:
            r = np.clip(np.asarray(v, dtype=float), -self.register_clip, self.register_clip)
            x = np.concatenate([x, r], axis=-1)
        return x

    def forward(self, module: int, x: np.ndarray, thetas: np.ndarray, rows: Optional[np.ndarray] = None) -> np.ndarray:
        """Outputs of ``module`` for inputs ``x`` (R, in).

        ``thetas`` is one parameter vector ``(n_params,)`` or a stack
        ``(P, n_params)``; in the latter case ``rows[r]`` selects the
        parameter vector used for input row ``r``.
        """
        mod = self.modules[module]
        h = x
        last = len(mod.layers) - 1
        for i, layer in enumerate(mod.layers):
            a, b = layer.shape
            if thetas.ndim == 1:
                h = h @ thetas[layer.w].reshape(a, b) + thetas[layer.b]
            else:
                w = thetas[:, layer.w].reshape(-1, a, b)[rows]
                h = np.einsum("ri,rij->rj", h, w) + thetas[:, layer.b][rows]
            h = np.tanh(h) if i == last else np.maximum(h, 0.0)
        return h

    def scale_action(self, out: np.ndarray) -> np.ndarray:
        return self.action_low + (out + 1.0) * 0.5 * (self.action_high - self.action_low)

    # -- acting ---------------------------------------------------------------

    def batch_controller(self, mdp: AugmentedMDP, thetas: np.ndarray, rows: Optional[np.ndarray] = None):
        """A controller for :meth:`AugmentedMDP.rollout`."""
        monitor = mdp.monitor
        succ_ids = [np.array([t.id for t in monitor.successors(q)], dtype=int) for q in range(monitor.n_states)]
        m = self.action_dim

        def control(s, q, v, mask):
            n = len(q)
            actions = np.empty((n, m))
            tids = mdp.self_loop_ids[q].copy()
            for state in np.unique(q):
                idx = np.flatnonzero(q == state)
                module = 0 if self.memoryless else int(state)
                out = self.forward(module, self.features(s[idx], v[idx]), thetas, None if rows is None else rows[idx])
                actions[idx] = self.scale_action(out[:, :m])
                ids = succ_ids[state]
                if self.memoryless or not ids.size:
                    continue
                scores = np.where(mask[idx][:, ids], out[:, m:], -np.inf)
                best = np.argmax(scores, axis=1)
                take = scores[np.arange(len(idx)), best] > 0.0
                tids[idx[take]] = ids[best[take]]
            return actions, tids

        return control

    def env_controller(self, thetas: np.ndarray, rows: Optional[np.ndarray] = None):
        """Controller ``s -> actions`` for a memoryless module."""

        def control(s):
            out = self.forward(0, self.features(s), thetas, rows)
            return self.scale_action(out[:, : self.action_dim])

        return control


def act(policy: PolicyModuleSet, state: AugmentedState, mdp: AugmentedMDP) -> AugmentedAction:
    """Augmented action of ``policy`` at a single augmented state.

    The transition is the enabled successor with the highest positive score;
    the self loop (fixed score 0) wins ties and whenever no score is
    positive.
    """
    q = state.monitor_state
    module = 0 if policy.memoryless else q
    x = policy.features(state.env_state[None], np.asarray(state.valuation)[None])
    out = policy.forward(module, x, policy.params)[0]
    m = policy.action_dim
    action = policy.scale_action(out[:m])
    chosen = mdp.monitor.self_loop(q).id
    if not policy.memoryless:
        enabled = set(mdp.enabled_transitions(state))
        best = 0.0
        for j, t in enumerate(mdp.monitor.successors(q)):
            if t.id in enabled and out[m + j] > best:
                best, chosen = out[m + j], t.id
    return AugmentedAction(action, chosen)


# ---------------------------------------------------------------------------
# Checkpoints


def _layout(policy: PolicyModuleSet) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "state_dim": policy.state_dim,
        "action_dim": policy.action_dim,
        "n_registers": policy.n_registers,
        "out_degrees": policy.out_degrees,
        "hidden": list(policy.hidden),
        "memoryless": policy.memoryless,
        "register_clip": policy.register_clip,
        "layer_shapes": [[list(layer.shape) for layer in mod.layers] for mod in policy.modules],
    }


def save_policy(policy: PolicyModuleSet, path, monitor: Optional[TaskMonitor] = None) -> None:
    meta = _layout(policy)
    meta["monitor"] = monitor.fingerprint() if monitor is not None else None
    np.savez(
        path,
        meta=np.array(json.dumps(meta)),
        params=policy.params,
        input_shift=policy.input_shift,
        input_scale=policy.input_scale,
        action_low=policy.action_low,
        action_high=policy.action_high,
    )


def load_policy(path, monitor: Optional[TaskMonitor] = None) -> PolicyModuleSet:
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        if monitor is not None and meta.get("monitor") not in (None, monitor.fingerprint()):
            raise ValueError("checkpoint was trained for a different monitor")
        policy = PolicyModuleSet(
            meta["state_dim"], meta["action_dim"], meta["n_registers"], meta["out_degrees"],
            hidden=tuple(meta["hidden"]), memoryless=meta["memoryless"], register_clip=meta["register_clip"],
            input_shift=data["input_shift"], input_scale=data["input_scale"],
            action_low=data["action_low"], action_high=data["action_high"],
        )
        if policy.n_params != len(data["params"]):
            raise ValueError("checkpoint parameter count does not match its layout")
        policy.params = np.array(data["params"])
    return policy
