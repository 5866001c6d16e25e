import numpy as np
import pytest
from hypothesis import strategies as st

from speclearn.envs import GridEnv, PointRobotEnv
from speclearn.lang import Achieve, And, Atom, Choice, Ensuring, Or, Seq

POINT = PointRobotEnv()
GRID = GridEnv()


# -- random specifications over reach/avoid on small grids ---------------------


def _coord():
    return st.integers(0, 3).map(float)


def atom_strategy():
    reach = st.builds(lambda x, y: Atom("reach", (x, y)), _coord(), _coord())
    avoid = st.builds(
        lambda x, y, w, h: Atom("avoid", (x, x + w, y, y + h)), _coord(), _coord(), st.sampled_from([0.0, 1.0]),
        st.sampled_from([0.0, 1.0]),
    )
    return st.one_of(reach, avoid)


def pred_strategy():
    return st.recursive(
        atom_strategy(),
        lambda inner: st.one_of(st.builds(And, inner, inner), st.builds(Or, inner, inner)),
        max_leaves=3,
    )


def spec_strategy(max_leaves=4):
    return st.recursive(
        st.builds(Achieve, pred_strategy()),
        lambda inner: st.one_of(
            st.builds(Ensuring, inner, pred_strategy()),
            st.builds(Seq, inner, inner),
            st.builds(Choice, inner, inner),
        ),
        max_leaves=max_leaves,
    )


def random_atom(rng):
    x, y = rng.integers(0, 4, size=2).astype(float)
    if rng.random() < 0.6:
        return Atom("reach", (x, y))
    w, h = rng.integers(0, 2, size=2).astype(float)
    return Atom("avoid", (x, x + w, y, y + h))


def random_pred(rng, depth=2):
    if depth == 0 or rng.random() < 0.6:
        return random_atom(rng)
    op = And if rng.random() < 0.5 else Or
    return op(random_pred(rng, depth - 1), random_pred(rng, depth - 1))


def random_spec(rng, depth=5):
    """A random specification whose tree depth is at most ``depth``."""
    if depth <= 1 or rng.random() < 0.3:
        return Achieve(random_pred(rng))
    kind = rng.integers(3)
    if kind == 0:
        return Ensuring(random_spec(rng, depth - 1), random_pred(rng))
    if kind == 1:
        return Seq(random_spec(rng, depth - 1), random_spec(rng, depth - 1))
    return Choice(random_spec(rng, depth - 1), random_spec(rng, depth - 1))


def spec_depth(spec) -> int:
    if isinstance(spec, Achieve):
        return 1
    if isinstance(spec, Ensuring):
        return 1 + spec_depth(spec.spec)
    a, b = (spec.first, spec.second) if isinstance(spec, Seq) else (spec.left, spec.right)
    return 1 + max(spec_depth(a), spec_depth(b))


def grid_rollouts(env: GridEnv, horizon: int) -> np.ndarray:
    """Every state sequence of the deterministic grid, shape (4**T, T+1, 2)."""
    n = 4**horizon
    codes = np.arange(n)
    actions = np.stack([(codes // 4**k) % 4 for k in range(horizon)], axis=1)
    s = env.reset(n)
    states = [s]
    for k in range(horizon):
        s = env.step(s, actions[:, k])
        states.append(s)
    return np.stack(states, axis=1)


@pytest.fixture
def point():
    return PointRobotEnv()


@pytest.fixture
def grid():
    return GridEnv()


def _reach_params(guard):
    from speclearn.lang import atoms
    from speclearn.monitor import AndGuard, PredGuard

    if isinstance(guard, PredGuard):
        return [a.params for a in atoms(guard.pred) if a.name == "reach"]
    if isinstance(guard, AndGuard):
        return _reach_params(guard.left) + _reach_params(guard.right)
    return []


def guided_controller(mdp, rng, p_take=0.5, p_wander=0.2, lane=3.0, jitter=0.5):
    """Random augmented controller that mostly steers toward a reach target
    guarding an edge out of the current monitor state and takes a random
    enabled non-self transition with probability ``p_take``, so rollouts
    end in monitor states of every depth.

    Planar targets are approached along a lane ``lane`` units to the side
    until the robot is level with them, which keeps it clear of obstacles
    sitting between targets; ``lane=0`` heads straight for them.
    """
    monitor = mdp.monitor
    everything = sorted({p for t in monitor.transitions for p in _reach_params(t.guard)})
    per_state = []
    for q in range(monitor.n_states):
        own = sorted({p for t in monitor.successors(q) for p in _reach_params(t.guard)})
        per_state.append(np.array(own or everything, dtype=float))
    everything = np.array(everything, dtype=float)
    m = mdp.env.action_dim

    def control(s, q, v, mask):
        n = len(q)
        a = rng.uniform(-1, 1, size=(n, m))
        if len(everything):
            d = everything.shape[1]
            goal = np.empty((n, d))
            for state in np.unique(q):
                rows = np.flatnonzero(q == state)
                options = per_state[state] if len(per_state[state]) else everything
                goal[rows] = options[rng.integers(len(options), size=len(rows))]
            wander = rng.random(n) < p_wander
            goal[wander] = everything[rng.integers(len(everything), size=int(wander.sum()))]
            if d == 2 and lane:
                side = np.where(np.arange(n) % 2 == 0, lane, -lane)
                far = np.abs(s[:, 1] - goal[:, 1]) > 2
                goal[far, 0] += side[far]
            a[:, :d] = np.clip(goal - s[:, :d] + rng.normal(0, jitter, size=(n, d)), -1, 1)
        tids = mdp.self_loop_ids[q].copy()
        take = rng.random(n) < p_take
        scores = np.where(mask, rng.random(mask.shape), -1.0)
        scores[np.arange(n), tids] = -1.0
        best = scores.argmax(axis=1)
        ok = take & (scores[np.arange(n), best] >= 0)
        tids[ok] = best[ok]
        return a, tids

    return control
