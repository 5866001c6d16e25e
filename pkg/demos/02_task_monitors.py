"""
Task monitors and shaped rewards
================================

A specification compiles to a task monitor: a small automaton whose
registers remember how well each subtask went.  Running the monitor next
to the environment turns the task into an ordinary reward.  This script
prints the monitor for the fetch-and-return task, steps it by hand along
a good trajectory, and shows how shaping ranks trajectories that stall.
"""

import numpy as np

from speclearn import AugmentedAction, AugmentedMDP, PointRobotEnv, compile_spec, parse_spec, to_dot
from speclearn.cli import monitor_text

env = PointRobotEnv(noise=0.0, initial_state=(5.0, 0.0, 50.0))
spec = parse_spec("achieve (reach(5,10); reach(5,0)) ensuring avoid(4,6,4,6) and fuel_positive", env.predicates)
monitor = compile_spec(spec)

# %%
# The monitor
# -----------
# Four states and four registers: x1 and x2 hold how close the robot got
# to each target, x3 and x4 the worst obstacle distance and fuel level.
# Moving on from q2 requires every register seen so far to be positive.

print(monitor_text(monitor))

# %%
# ``to_dot`` renders the same monitor for graphviz.

print(to_dot(monitor).splitlines()[0], "...", f"({len(to_dot(monitor).splitlines())} lines)")

# %%
# Stepping by hand
# ----------------
# Each augmented action is a velocity plus the id of the monitor edge to
# take.  Self loops keep the registers up to date; the other edges fire
# only when their guard holds.

mdp = AugmentedMDP(env, monitor)
plan = [(1, 1)] * 3 + [(0, 1)] * 4 + [(-1, 1)] * 3 + [(0, 0), (0, 0)]
plan += [(1, -1)] * 3 + [(0, -1)] * 4 + [(-1, -1)] * 3 + [(0, 0)]
state = mdp.reset()
for velocity in plan:
    q = state.monitor_state
    # take the first enabled edge that leaves the current state, else stay
    leaving = [t for t in mdp.enabled_transitions(state) if monitor.transitions[t].target != q]
    tid = leaving[0] if leaving else monitor.self_loop(q).id
    if leaving:
        x, y = state.env_state[:2]
        print(f"at ({x:.0f}, {y:.0f}): {monitor.name(q)} -> {monitor.name(monitor.transitions[tid].target)}")
    state = mdp.step(state, AugmentedAction(np.array(velocity, float), tid))
print("registers at the end:", np.round(state.valuation, 2))

# %%
# Shaping
# -------
# Trajectories that never finish get a reward below every finished one,
# ranked first by how deep into the monitor they got and then by how
# close they came to the next guard.


def shaped(batch_plan, steps):
    moves = np.array(batch_plan[:steps], dtype=float)

    def control(s, q, v, mask):
        t = control.t
        control.t += 1
        a = moves[t] if t < len(moves) else np.zeros(2)
        # prefer leaving the current state whenever an edge is enabled
        tids = mdp.self_loop_ids[q].copy()
        for row in range(len(q)):
            for tid in np.flatnonzero(mask[row]):
                if monitor.transitions[tid].target != q[row]:
                    tids[row] = tid
                    break
        return np.tile(a, (len(q), 1)), tids

    control.t = 0
    batch = mdp.rollout(control, 1, np.random.default_rng(0), horizon=len(plan))
    return batch.monitor_states[0, -1], mdp.batch_shaped(batch)[0]


for steps in (3, 8, 11, 17, len(plan)):
    q, r = shaped(plan, steps)
    print(f"follow the plan for {steps:2d} steps: ends in {monitor.name(int(q))}, shaped reward {r:8.2f}")
