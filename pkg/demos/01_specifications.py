"""
Writing and judging task specifications
=======================================

A robot starts at (5, 0) with 7 units of fuel.  It must visit (5, 10),
come back to (5, 0), never enter the box [4, 6] x [4, 6] and never run
dry.  This script parses that task, prints it back and scores a few
hand-made trajectories with the Boolean and the quantitative semantics.
"""

import numpy as np

from speclearn import PointRobotEnv, Rollout, eval_bool, eval_quant, parse_spec, print_spec
from speclearn.lang import SpecSyntaxError

env = PointRobotEnv(noise=0.0)

# %%
# Parsing
# -------
# ``reach``, ``avoid`` and ``fuel_positive`` come from the environment's
# predicate registry.  ``achieve (a; b)`` is shorthand for
# ``achieve a; achieve b`` and ``ensuring`` covers the whole sequence.

text = "achieve (reach(5,10); reach(5,0)) ensuring avoid(4,6,4,6) and fuel_positive"
spec = parse_spec(text, env.predicates)
print("canonical form:", print_spec(spec))
print("tree:          ", spec)

# %%
# Errors point at the offending column.

try:
    parse_spec("achieve reach(5,10", env.predicates, filename="task.spec")
except SpecSyntaxError as err:
    print("syntax error:  ", err)

# %%
# Judging trajectories
# --------------------
# A trajectory is an array of states.  The final state is never
# inspected, so each trajectory below repeats its last point.


def trajectory(points, fuel=7.0):
    states = np.array([[x, y, fuel] for x, y in points], dtype=float)
    return Rollout(states, np.zeros((len(points) - 1, 2)))


detour = [(5, 0), (7, 3), (7, 7), (5, 10), (7, 7), (7, 3), (5, 0), (5, 0)]
through = [(5, 0), (5, 3), (5, 5), (5, 10), (5, 5), (5, 3), (5, 0), (5, 0)]
one_way = [(5, 0), (7, 3), (7, 7), (5, 10), (5, 10)]

for name, points in [("detour", detour), ("through the box", through), ("one way", one_way)]:
    zeta = trajectory(points)
    print(f"{name:16s} satisfied={eval_bool(spec, zeta, env.predicates)!s:5s} "
          f"robustness={eval_quant(spec, zeta, env.predicates):+.2f}")

# %%
# Robustness is a margin: the detour keeps one unit away from the box, so
# its score is 1.  With less fuel the same path scores the smallest fuel
# level it sees.

print("detour on 0.4 fuel:", eval_quant(spec, trajectory(detour, fuel=0.4), env.predicates))
