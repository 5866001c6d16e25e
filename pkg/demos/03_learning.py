"""
Learning a policy from a specification
======================================

Augmented random search trains one small network per monitor state.  The
networks see the robot state and the monitor registers and choose both a
velocity and when to move to the next monitor state.  This script trains
on the fetch-and-return task with and without reward shaping, then runs
the learned policy as a plain controller of the robot.
"""

import tempfile
from pathlib import Path

import numpy as np

from speclearn import ArsConfig, AugmentedMDP, SUITE, project_policy, run_benchmark
from speclearn.bench import read_curve_csv
from speclearn.policy import act
from speclearn.semantics import Rollout, eval_bool

bench = SUITE["phi3"]
print(f"{bench.name}: {bench.spec_text}")

# %%
# Shaped against unshaped rewards
# -------------------------------
# Both runs get 12,000 sample rollouts.  Without shaping every unfinished
# rollout earns the same constant, so random search has no direction to
# follow until it finishes the task by luck.

cfg = ArsConfig(eval_every=10, eval_rollouts=100)
out = Path(tempfile.mkdtemp(prefix="speclearn-demo-"))
runs = {mode: run_benchmark("phi3", cfg, seed=0, mode=mode, budget=12_000, out_dir=out)
        for mode in ("shaped", "unshaped")}

print(f"{'samples':>8s} {'shaped':>8s} {'unshaped':>9s}")
for a, b in zip(runs["shaped"].curve, runs["unshaped"].curve):
    print(f"{a.samples:8d} {a.satisfaction:8.2f} {b.satisfaction:9.2f}")

# %%
# Each run also left its learning curve on disk.

path = runs["shaped"].csv_path
print(path.name, "has", len(read_curve_csv(path)), "points")

# %%
# Using the policy
# ----------------
# ``project_policy`` wraps the module set into a controller of the robot
# alone; it runs the monitor internally to pick the active module.

env, spec, monitor = bench.build()
mdp = AugmentedMDP(env, monitor)
policy = runs["shaped"].result.policy
controller = project_policy(policy, mdp)

rng = np.random.default_rng(1)
state = env.reset()
states = [state]
for _ in range(env.horizon):
    state = env.step(state, controller(state), rng)
    states.append(state)
states = np.array(states)
zeta = Rollout(states, np.zeros((env.horizon, 2)))
print("satisfied:", eval_bool(spec, zeta, env.predicates))
print("path:", " ".join(f"({x:.0f},{y:.0f})" for x, y in states[::5, :2]))

# %%
# The augmented action at the start: a velocity and the self loop, since
# no guard out of the initial monitor state holds yet.

a = act(policy, mdp.reset(), mdp)
print("first action:", np.round(a.env_action, 2), "edge", a.transition)
