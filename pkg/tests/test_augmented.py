import io

import numpy as np
import pytest

from conftest import guided_controller
from speclearn.augmented import (
    AugmentedAction,
    AugmentedMDP,
    AugmentedRollout,
    ShapingConstants,
    compute_shaping,
    project_policy,
    read_trace,
    write_trace,
)
from speclearn.bench import SUITE
from speclearn.envs import PointRobotEnv
from speclearn.lang import parse_spec
from speclearn.monitor import INF, compile_spec
from speclearn.semantics import batch_eval_bool

PHI1 = "achieve reach(5,10) ensuring avoid(4,6,4,6)"
PHI_EX = "achieve (reach(5,10); reach(5,0)) ensuring avoid(4,6,4,6) and fuel_positive"


def make_mdp(text, noise=0.0, shaping=None):
    env = PointRobotEnv(noise=noise)
    monitor = compile_spec(parse_spec(text, env.predicates))
    return AugmentedMDP(env, monitor, shaping)


def run(mdp, moves):
    """Roll out ``moves`` = [(action, target monitor state or None for self)]."""
    state = mdp.reset()
    S, Q, V, A, D = [state.env_state], [state.monitor_state], [state.valuation], [], []
    for action, target in moves:
        q = state.monitor_state
        tid = mdp.monitor.self_loop(q).id
        if target is not None:
            tid = next(t.id for t in mdp.monitor.successors(q) if t.target == target)
        state = mdp.step(state, AugmentedAction(np.asarray(action, float), tid))
        S.append(state.env_state), Q.append(state.monitor_state), V.append(state.valuation)
        A.append(action), D.append(tid)
    return AugmentedRollout(np.array(S), np.array(Q), np.array(V), np.array(A, float), np.array(D))


def test_reset_gives_initial_augmented_state():
    mdp = make_mdp(PHI_EX)
    s = mdp.reset()
    np.testing.assert_array_equal(s.env_state, [5.0, 0.0, 7.0])
    assert s.monitor_state == 0
    np.testing.assert_array_equal(s.valuation, [0.0, 0.0, INF, INF])


def test_only_the_self_loop_is_enabled_away_from_the_target():
    mdp = make_mdp(PHI_EX)
    s = mdp.reset()
    assert mdp.enabled_transitions(s) == [mdp.monitor.self_loop(0).id]
    with pytest.raises(ValueError):
        mdp.step(s, AugmentedAction(np.zeros(2), mdp.monitor.successors(0)[0].id))


def test_update_reads_the_state_before_the_step():
    mdp = make_mdp(PHI1)
    zeta = run(mdp, [((0, 1), None)] * 9 + [((0, 0.5), None), ((1, 0), 1)])
    assert zeta.monitor_states[-1] == 1
    # recorded at (5, 9.5), not at the post-step (6, 9.5)
    assert zeta.valuations[-1][0] == pytest.approx(0.5)
    # avoid register: closest approach to the box along x = 5 is the box itself (inside => negative)
    assert zeta.valuations[-1][1] < 0


def test_terminal_reward_is_bottom_outside_finals():
    mdp = make_mdp(PHI1)
    zeta = run(mdp, [((0, 1), None)] * 3)
    assert mdp.terminal_reward(zeta) is None
    assert mdp.unshaped_reward(zeta) == mdp.shaping.c_lower


def test_terminal_reward_on_a_clean_path():
    mdp = make_mdp(PHI1)
    path = [((1, 1), None)] * 3 + [((0, 1), None)] * 4 + [((-1, 1), None)] * 3
    zeta = run(mdp, path + [((0, 0), 1)])
    # reached (5, 10) exactly; closest approach to the box is 1 at (8, 3..7)
    assert mdp.terminal_reward(zeta) == pytest.approx(1.0)


def test_alpha_is_best_outgoing_guard():
    mdp = make_mdp(PHI_EX)
    s = mdp.reset()
    assert mdp.alpha(s) == pytest.approx(-9.0)
    with pytest.raises(ValueError):
        mdp.alpha(type(s)(s.env_state, 3, s.valuation))


def test_shaped_reward_by_hand():
    env = PointRobotEnv(noise=0.0)
    monitor = compile_spec(parse_spec(PHI1, env.predicates))
    shaping = ShapingConstants(-20.0, 15.0, {0: 0, 1: 1}, 1)
    mdp = AugmentedMDP(env, monitor, shaping)
    zeta = run(mdp, [((0, 1), None), ((0, 1), None)])
    # alpha over s0, s1 = max(-9, -8); depth term 2 * 15 * (0 - 1)
    assert mdp.shaped_reward(zeta) == pytest.approx(-8 - 30 - 20)


def test_shaped_reward_when_entering_on_the_last_step():
    mdp = make_mdp(PHI_EX)
    zeta = run(mdp, [((1, 1), None)] * 3 + [((0, 1), None)] * 4 + [((-1, 1), None)] * 3 + [((0, -1), 1)])
    assert zeta.monitor_states[-1] == 1 and zeta.monitor_states[-2] == 0
    c = mdp.shaping
    expected = mdp.alpha(zeta.state(zeta.length)) + 2 * c.c_upper * (1 - 3) + c.c_lower
    assert mdp.shaped_reward(zeta) == pytest.approx(expected)


def test_batch_rewards_match_single_rollouts():
    mdp = make_mdp(PHI_EX, noise=0.05)
    rng = np.random.default_rng(3)
    batch = mdp.rollout(guided_controller(mdp, rng), 200, rng)
    shaped = mdp.batch_shaped(batch)
    unshaped = mdp.batch_unshaped(batch)
    reached, reward = mdp.batch_terminal(batch)
    assert 0 < reached.sum() < len(reached)
    for b in range(len(batch)):
        zeta = batch[b]
        assert shaped[b] == pytest.approx(mdp.shaped_reward(zeta), abs=1e-9)
        assert unshaped[b] == pytest.approx(mdp.unshaped_reward(zeta), abs=1e-9)
        single = mdp.terminal_reward(zeta)
        assert (single is None) == (not reached[b])


def test_positive_reward_implies_satisfaction():
    # a full tank, so the lane detours of the guided controller can win
    env = PointRobotEnv(noise=0.05, initial_state=(5.0, 0.0, 50.0))
    mdp = AugmentedMDP(env, compile_spec(parse_spec(PHI_EX, env.predicates)))
    rng = np.random.default_rng(4)
    batch = mdp.rollout(guided_controller(mdp, rng), 500, rng)
    reached, reward = mdp.batch_terminal(batch)
    won = reached & (reward > 0)
    sat = batch_eval_bool(mdp.monitor.spec, batch.env_states, mdp.registry)
    assert won.any()
    assert not np.any(won & ~sat)


@pytest.mark.parametrize("name", ["phi1", "phi4", "phi5", "phi7", "cartpole"])
def test_shaping_preserves_order_and_depth(name):
    env, spec, monitor = SUITE[name].build()
    mdp = AugmentedMDP(env, monitor)
    rng = np.random.default_rng(0)
    rewards, shaped, depth, final = [], [], [], []
    # dawdling, mixed and focused controllers cover every depth and the finals
    configs = [dict(p_take=0.05), dict(p_take=0.5), dict(p_take=1.0, p_wander=0.0, lane=2.0, jitter=0.2)]
    for kw in configs:
        batch = mdp.rollout(guided_controller(mdp, rng, **kw), 1000, rng)
        reached, r = mdp.batch_terminal(batch)
        rewards.append(np.where(reached, r, -np.inf))
        shaped.append(mdp.batch_shaped(batch))
        q = batch.monitor_states[:, -1]
        depth.append(mdp.depth[q])
        final.append(reached)
    r, s, d, f = (np.concatenate(x) for x in (rewards, shaped, depth, final))
    assert f.any() and (~f).any()
    i, j = rng.integers(len(r), size=(2, 20000))
    better = r[i] > r[j]
    assert np.all(s[i][better] > s[j][better])
    deeper = ~f[i] & ~f[j] & (d[i] > d[j])
    assert np.all(s[i][deeper] >= s[j][deeper])
    assert mdp.alpha_violations == 0


def test_shaping_constants_bound_alpha_and_final_rewards():
    env = PointRobotEnv()
    monitor = compile_spec(parse_spec(PHI_EX, env.predicates))
    c = compute_shaping(monitor, env)
    assert c.c_upper >= 1 and c.c_lower < -c.c_upper
    assert c.depths == {0: 0, 1: 1, 2: 2, 3: 3} and c.max_depth == 3
    override = compute_shaping(monitor, env, c_lower=-500.0, c_upper=100.0)
    assert (override.c_lower, override.c_upper) == (-500.0, 100.0)


def test_projected_policy_replays_the_augmented_rollout():
    mdp = make_mdp("achieve (reach(5,10); reach(5,0)) ensuring avoid(4,6,4,6)")
    moves = [((1, 1), None)] * 3 + [((0, 1), None)] * 4 + [((-1, 1), None)] * 3 + [((0, 0), 1), ((0, 0), 2)]
    moves += [((1, -1), None)] * 3 + [((0, -1), None)] * 4 + [((-1, -1), None)] * 3 + [((0, 0), 3)]
    zeta = run(mdp, moves)
    script = iter(zip(moves, zeta.transitions))

    def act(state):
        (action, _), tid = next(script)
        return AugmentedAction(np.asarray(action, float), int(tid))

    policy = project_policy(act, mdp)
    s = mdp.env.reset()
    states = [s]
    for _ in moves:
        s = mdp.env.step(s, policy(s))
        states.append(s)
    np.testing.assert_allclose(np.array(states), zeta.env_states)
    assert policy.monitor_state == zeta.monitor_states[-1] == 3
    np.testing.assert_allclose(policy.valuation, zeta.valuations[-1])
    assert mdp.terminal_reward(zeta) > 0
    policy.reset()
    assert policy.monitor_state == 0


def test_trace_round_trip():
    mdp = make_mdp(PHI_EX)
    zeta = run(mdp, [((1, 1), None)] * 3)
    buf = io.StringIO()
    write_trace(zeta, buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 4 and lines[-1].endswith("-\t-\t-")
    back = read_trace(io.StringIO(buf.getvalue()), 3, 4)
    for field in ("env_states", "monitor_states", "valuations", "env_actions", "transitions"):
        np.testing.assert_array_equal(getattr(back, field), getattr(zeta, field))
