"""Augmented random search over per-monitor-state policies.

Three reward modes are supported:

``shaped``
    the stratified shaped reward of the augmented MDP;
``unshaped``
    the monitor's final reward, with rollouts that end outside a final
    state scored ``c_lower``;
``tltl``
    a single memoryless network on the environment state, rewarded with the
    robustness of the specification on the rollout.

All randomness derives from ``ArsConfig.seed`` through
``numpy.random.SeedSequence``, so identical inputs give bitwise-identical
curves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .augmented import AugmentedMDP, RolloutBatch, ShapingConstants
from .lang import Spec
from .monitor import TaskMonitor
from .policy import PolicyModuleSet
from .semantics import batch_eval_bool, batch_eval_quant

logger = logging.getLogger(__name__)

__all__ = ["ArsConfig", "CurvePoint", "TrainResult", "REWARD_MODES", "evaluate", "train", "env_rollout", "make_policy"]

REWARD_MODES = ("shaped", "unshaped", "tltl")


@dataclass(frozen=True)
class ArsConfig:
    directions: int = 30
    top_directions: int = 15
    step_size: float = 0.02
    stddev: float = 0.03
    rollouts_per_eval: int = 1
    iterations: int = 100
    seed: int = 0
    eval_every: int = 10
    eval_rollouts: int = 100
    target: Optional[float] = None  # stop once satisfaction reaches this
    hidden: tuple = (30, 30)
    tltl_hidden: tuple = (50, 50)
    register_clip: float = 10.0
    normalize_inputs: bool = False

    def __post_init__(self):
        for name in ("directions", "top_directions", "rollouts_per_eval", "eval_every", "eval_rollouts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.top_directions > self.directions:
            raise ValueError("top_directions cannot exceed directions")
        if self.step_size <= 0 or self.stddev <= 0:
            raise ValueError("step_size and stddev must be positive")

    @property
    def samples_per_iteration(self) -> int:
        return 2 * self.directions * self.rollouts_per_eval


@dataclass(frozen=True)
class CurvePoint:
    samples: int
    satisfaction: float
    mean_shaped_reward: float
    iteration: int
    seed: int


@dataclass
class TrainResult:
    policy: PolicyModuleSet
    curve: list[CurvePoint] = field(default_factory=list)
    samples: int = 0
    agreement_violations: int = 0
    missed_witnesses: int = 0


# ---------------------------------------------------------------------------
# Rollouts


def env_rollout(env, controller, n: int, rng, horizon: Optional[int] = None, env_states=None) -> np.ndarray:
    """Env-only rollouts ``(n, T+1, d)`` under ``controller(s) -> actions``."""
    T = env.horizon if horizon is None else horizon
    s = env.reset(n, rng) if env_states is None else np.asarray(env_states, dtype=float)
    states = [s]
    for _ in range(T):
        s = env.step(s, controller(s), rng)
        states.append(s)
    return np.stack(states, axis=1)


def _input_normalizer(env, enabled: bool):
    if not enabled:
        return None, None
    lo, hi = env.state_bounds()
    return (lo + hi) / 2.0, np.maximum((hi - lo) / 2.0, 1e-8)


def make_policy(mdp: AugmentedMDP, cfg: ArsConfig, mode: str) -> PolicyModuleSet:
    shift, scale = _input_normalizer(mdp.env, cfg.normalize_inputs)
    if mode == "tltl":
        return PolicyModuleSet.memoryless_for(mdp.env, hidden=cfg.tltl_hidden, input_shift=shift, input_scale=scale)
    return PolicyModuleSet.for_monitor(
        mdp, hidden=cfg.hidden, register_clip=cfg.register_clip, input_shift=shift, input_scale=scale
    )


def _rollout(policy: PolicyModuleSet, mdp: AugmentedMDP, thetas, rows, n, rng):
    """Augmented rollouts, or env-only rollouts for a memoryless policy."""
    if policy.memoryless:
        return env_rollout(mdp.env, policy.env_controller(thetas, rows), n, rng)
    return mdp.rollout(policy.batch_controller(mdp, thetas, rows), n, rng)


def _rewards(out, mdp: AugmentedMDP, spec: Optional[Spec], mode: str) -> np.ndarray:
    if mode == "shaped":
        return mdp.batch_shaped(out)
    if mode == "unshaped":
        return mdp.batch_unshaped(out)
    return batch_eval_quant(spec, out, mdp.registry)


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(
    policy: PolicyModuleSet,
    env,
    monitor: TaskMonitor,
    shaping: Optional[ShapingConstants],
    n: int,
    rng,
    spec: Optional[Spec] = None,
    stats: Optional[dict] = None,
) -> tuple[float, float]:
    """``(mean shaped reward, satisfaction rate)`` over ``n`` rollouts.

    Satisfaction is decided by the Boolean semantics of ``spec`` on the
    projected rollouts.  ``spec`` defaults to the monitor's source, which
    must then be attached as ``monitor.spec``.  A memoryless policy is run
    through the monitor with the self loop always chosen, so its shaped
    reward reports progress only through the initial monitor state.

    When ``stats`` is given, ``agreement_violations`` counts rollouts whose
    final reward is positive although the projection violates the
    specification, and ``missed_witnesses`` counts satisfying projections
    whose own monitor run did not earn a positive reward.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    spec = spec if spec is not None else getattr(monitor, "spec", None)
    if spec is None:
        raise ValueError("a specification is needed to judge satisfaction")
    mdp = AugmentedMDP(env, monitor, shaping)
    if policy.memoryless:
        control = policy.env_controller(policy.params)
        batch = mdp.rollout(lambda s, q, v, mask: (control(s), mdp.self_loop_ids[q]), n, rng)
    else:
        batch = mdp.rollout(policy.batch_controller(mdp, policy.params), n, rng)
    shaped = mdp.batch_shaped(batch)
    sat = batch_eval_bool(spec, batch.env_states, mdp.registry)
    if stats is not None and not policy.memoryless:
        reached, reward = mdp.batch_terminal(batch)
        won = reached & (reward > 0)
        stats["agreement_violations"] = stats.get("agreement_violations", 0) + int(np.sum(won & ~sat))
        stats["missed_witnesses"] = stats.get("missed_witnesses", 0) + int(np.sum(sat & ~won))
    return float(np.mean(shaped)), float(np.mean(sat))


# ---------------------------------------------------------------------------
# Training


def train(
    env,
    monitor: TaskMonitor,
    shaping: Optional[ShapingConstants],
    cfg: ArsConfig,
    reward_mode: str = "shaped",
    spec: Optional[Spec] = None,
    policy: Optional[PolicyModuleSet] = None,
) -> TrainResult:
    """Run ARS and return the trained policy with its learning curve.

    The curve gets a point after every ``cfg.eval_every`` iterations (and
    after the last one), each measured on ``cfg.eval_rollouts`` fresh
    rollouts.  Training stops early once ``cfg.target`` is reached.
    """
    if reward_mode not in REWARD_MODES:
        raise ValueError(f"reward_mode must be one of {REWARD_MODES}, got {reward_mode!r}")
    spec = spec if spec is not None else getattr(monitor, "spec", None)
    if spec is None:
        raise ValueError("a specification is needed for evaluation and tltl rewards")
    mdp = AugmentedMDP(env, monitor, shaping)
    root = np.random.SeedSequence(cfg.seed)
    init_seq, train_seq, eval_seq = root.spawn(3)
    if policy is None:
        policy = make_policy(mdp, cfg, reward_mode)
        policy.init_params(np.random.default_rng(init_seq))
    theta = policy.params.copy()
    result = TrainResult(policy)
    stats: dict = {}

    n_dirs, per = cfg.directions, cfg.rollouts_per_eval
    rows = np.repeat(np.arange(2 * n_dirs), per)
    for it in range(cfg.iterations):
        it_seq = train_seq.spawn(1)[0]
        dir_rng, env_rng = (np.random.default_rng(s) for s in it_seq.spawn(2))
        deltas = dir_rng.standard_normal((n_dirs, policy.n_params))
        thetas = np.concatenate([theta + cfg.stddev * deltas, theta - cfg.stddev * deltas])
        out = _rollout(policy, mdp, thetas, rows, len(rows), env_rng)
        rewards = _rewards(out, mdp, spec, reward_mode)
        if not np.all(np.isfinite(rewards)):
            bad = int(np.sum(~np.isfinite(rewards)))
            raise FloatingPointError(f"iteration {it}: {bad} non-finite reward(s) in {reward_mode} mode")
        r = rewards.reshape(2 * n_dirs, per).mean(axis=1)
        r_pos, r_neg = r[:n_dirs], r[n_dirs:]
        top = np.argsort(-np.maximum(r_pos, r_neg), kind="stable")[: cfg.top_directions]
        sigma = np.std(np.concatenate([r_pos[top], r_neg[top]]))
        if sigma > 0:
            step = (r_pos[top] - r_neg[top]) @ deltas[top]
            theta = theta + cfg.step_size / (cfg.top_directions * sigma) * step
        result.samples += cfg.samples_per_iteration

        if (it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iterations:
            policy.params = theta
            eval_rng = np.random.default_rng(eval_seq.spawn(1)[0])
            mean_r, sat = evaluate(policy, env, monitor, mdp.shaping, cfg.eval_rollouts, eval_rng, spec, stats)
            result.curve.append(CurvePoint(result.samples, sat, mean_r, it + 1, cfg.seed))
            logger.info("iter %d samples %d satisfaction %.3f reward %.3f", it + 1, result.samples, sat, mean_r)
            if cfg.target is not None and sat >= cfg.target:
                break

    policy.params = theta
    result.agreement_violations = stats.get("agreement_violations", 0)
    result.missed_witnesses = stats.get("missed_witnesses", 0)
    if result.agreement_violations:
        logger.error("%d rollout(s) earned a positive final reward without satisfying the specification",
                     result.agreement_violations)
    return result
