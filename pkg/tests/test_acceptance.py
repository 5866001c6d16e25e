"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or
``python tests/test_acceptance.py``.  The learning criteria (4 and 5)
train real policies and take several minutes.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import grid_rollouts, guided_controller, random_spec  # noqa: E402
from speclearn.ars import ArsConfig  # noqa: E402
from speclearn.augmented import AugmentedAction, AugmentedMDP, compute_shaping  # noqa: E402
from speclearn.bench import SUITE, run_benchmark  # noqa: E402
from speclearn.cli import main  # noqa: E402
from speclearn.envs import GridEnv  # noqa: E402
from speclearn.lang import parse_spec  # noqa: E402
from speclearn.monitor import (  # noqa: E402
    INF,
    Min,
    Reg,
    compile_spec,
    eval_reward,
    guard_bool,
    guard_quant,
    validate_monitor,
)
from speclearn.semantics import Rollout, batch_eval_bool, batch_eval_quant, eval_bool  # noqa: E402

SEEDS = (0, 1, 2)
ABLATION_BUDGET = 100_000


def report(number, ok, detail, capsys=None):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return ok


# -- 1. satisfaction iff a positive-reward augmented witness exists ------------------------------


GRID_SPECS = {
    "achieve": "achieve reach(2,1)",
    "sequence": "achieve reach(1,0); achieve reach(1,2)",
    "choice": "achieve reach(3,0) or achieve reach(0,2)",
    "ensuring": "achieve reach(2,1) ensuring avoid(1,1,0,0)",
}


def has_witness(mdp, states, actions) -> bool:
    """Depth-first search over every monitor choice along a fixed rollout."""
    T = len(actions)
    stack = [(0, mdp.reset())]
    while stack:
        t, state = stack.pop()
        if t == T:
            q = state.monitor_state
            if q in mdp.monitor.finals and eval_reward(mdp.monitor, q, state.env_state, state.valuation,
                                                       mdp.registry) > 0:
                return True
            continue
        for tid in mdp.enabled_transitions(state):
            nxt = mdp.step(state, AugmentedAction(np.array([actions[t]]), tid))
            assert np.array_equal(nxt.env_state, states[t + 1])
            stack.append((t + 1, nxt))
    return False


def check_witness_equivalence():
    env = GridEnv(size=4, horizon=4)
    T = env.horizon
    states = grid_rollouts(env, T)
    codes = np.arange(4**T)
    actions = np.stack([(codes // 4**k) % 4 for k in range(T)], axis=1)
    counts = {}
    for name, text in GRID_SPECS.items():
        spec = parse_spec(text, env.predicates)
        mdp = AugmentedMDP(env, compile_spec(spec))
        agree = sat = 0
        for b in range(len(states)):
            truth = eval_bool(spec, Rollout(states[b], actions[b][:, None].astype(float)), env.predicates)
            agree += truth == has_witness(mdp, states[b], actions[b])
            sat += truth
        counts[name] = (agree, sat, len(states))
    return counts


def test_criterion_1_witness_equivalence_on_the_grid(capsys):
    start = time.perf_counter()
    counts = check_witness_equivalence()
    elapsed = time.perf_counter() - start
    ok = all(a == n and 0 < s < n for a, s, n in counts.values()) and elapsed < 60
    detail = ", ".join(f"{k} {a}/{n} agree ({s} sat)" for k, (a, s, n) in counts.items())
    assert report(1, ok, f"{detail}; {elapsed:.1f}s", capsys)


# -- 2. shaping keeps the order of rewards and the order of depths ---------------------------------


def pair_violations(r, s, d, final):
    """Violations over every ordered pair, via per-level extremes.

    (i) ``r_a > r_b`` must give ``s_a > s_b``; (ii) for two non-final
    rollouts ``d_a > d_b`` must give ``s_a >= s_b``.
    """
    bad_order = 0
    levels = np.unique(r)
    below = -np.inf
    for level in levels:
        group = s[r == level]
        bad_order += int(np.sum(group <= below))
        below = max(below, group.max())
    bad_depth = 0
    nf_s, nf_d = s[~final], d[~final]
    below = -np.inf
    for depth in np.unique(nf_d):
        group = nf_s[nf_d == depth]
        bad_depth += int(np.sum(group < below))
        below = max(below, group.max())
    return bad_order, bad_depth


def shaping_rollouts(name, per_config=1500, seed=0):
    env, spec, monitor = SUITE[name].build()
    mdp = AugmentedMDP(env, monitor, compute_shaping(monitor, env))
    rng = np.random.default_rng(seed)
    # the slowest config leaves long cart-pole rollouts in every monitor state
    configs = [dict(p_take=0.005), dict(p_take=0.05), dict(p_take=0.5),
               dict(p_take=1.0, p_wander=0.0, lane=2.0, jitter=0.2)]
    r, s, d, f = [], [], [], []
    for kw in configs:
        batch = mdp.rollout(guided_controller(mdp, rng, **kw), per_config, rng)
        reached, reward = mdp.batch_terminal(batch)
        r.append(np.where(reached, reward, -np.inf))
        s.append(mdp.batch_shaped(batch))
        d.append(mdp.depth[batch.monitor_states[:, -1]])
        f.append(reached)
    return mdp, *(np.concatenate(x) for x in (r, s, d, f))


@pytest.mark.parametrize("name", SUITE.names())
def test_criterion_2_shaping_properties(name, capsys):
    start = time.perf_counter()
    mdp, r, s, d, f = shaping_rollouts(name)
    bad_order, bad_depth = pair_violations(r, s, d, f)
    elapsed = time.perf_counter() - start
    n = len(r)
    ordered_pairs = int(np.sum([np.sum(r > x) for x in r]))
    depth_pairs = int(sum(np.sum(d[~f] > x) for x in d[~f]))
    c = mdp.shaping
    # with a single non-final depth the second property has nothing to compare
    needs_depth = len(set(c.depths[q] for q in range(mdp.monitor.n_states) if q not in mdp.monitor.finals)) > 1
    ok = (bad_order == 0 and bad_depth == 0 and mdp.alpha_violations == 0 and n * (n - 1) >= 100_000
          and f.any() and ordered_pairs > 0 and (depth_pairs > 0 or not needs_depth) and elapsed < 60)
    detail = (f"{name}: {n * (n - 1)} pairs, {ordered_pairs} strictly ordered, {depth_pairs} depth-ordered, "
              f"violations {bad_order}/{bad_depth}, C_l={c.c_lower:g} C_u={c.c_upper:g}, {elapsed:.1f}s")
    assert report(2, ok, detail, capsys)


# -- 3. random specifications compile to valid monitors ------------------------------------------------


def test_criterion_3_structural_validation(capsys):
    rng = np.random.default_rng(2024)
    problems = 0
    for _ in range(1000):
        problems += bool(validate_monitor(compile_spec(random_spec(rng, depth=5))))
    env = SUITE["phi1"].make_env()
    m = compile_spec(parse_spec("achieve (reach(5,10); reach(5,0)) ensuring avoid(4,6,4,6) and fuel_positive",
                                env.predicates))
    (final,) = m.finals
    golden = (m.n_states, m.n_registers) == (4, 4) and m.rewards[final] == Min(tuple(Reg(i) for i in range(4)))
    ok = problems == 0 and golden
    assert report(3, ok, f"1000 random specs, {problems} invalid; example monitor 4 states/4 registers/min reward "
                         f"{'ok' if golden else 'WRONG'}", capsys)


# -- 4. end-to-end learning ---------------------------------------------------------------------------------


def learning_runs(name):
    cfg = ArsConfig(eval_every=10, eval_rollouts=100)
    return [run_benchmark(name, cfg, seed=seed, env_params={"noise": 0.05}, stop_at_threshold=True) for seed in SEEDS]


@pytest.mark.parametrize("name", ["phi1", "phi2", "phi3", "phi4", "phi5"])
def test_criterion_4_learning(name, capsys):
    bench = SUITE[name]
    runs = learning_runs(name)
    hits = [r.best_satisfaction() >= bench.threshold and r.result.samples <= bench.budget for r in runs]
    violations = sum(r.result.agreement_violations for r in runs)
    ok = sum(hits) >= 2 and violations == 0
    detail = ", ".join(
        f"seed {r.seed}: {r.best_satisfaction():.2f} at {r.result.samples} samples" for r in runs
    )
    assert report(4, ok, f"{name} (>= {bench.threshold} within {bench.budget}): {detail}", capsys)


# -- 5. ablations --------------------------------------------------------------------------------------------------


def ablation_runs(budget=ABLATION_BUDGET):
    cfg = ArsConfig(eval_every=50, eval_rollouts=100)
    return {
        mode: [run_benchmark("phi5", cfg, seed=seed, mode=mode, budget=budget).final_satisfaction for seed in SEEDS]
        for mode in ("shaped", "tltl", "unshaped")
    }


def test_criterion_5_ablation_ordering(capsys):
    sat = ablation_runs()
    shaped, tltl, unshaped = (np.array(sat[m]) for m in ("shaped", "tltl", "unshaped"))
    wins = (shaped - tltl >= 0.3) & (shaped - unshaped >= 0.5)
    ok = int(wins.sum()) >= 2
    detail = "; ".join(f"seed {s}: shaped {a:.2f} tltl {b:.2f} unshaped {c:.2f}"
                       for s, a, b, c in zip(SEEDS, shaped, tltl, unshaped))
    assert report(5, ok, f"phi5 at {ABLATION_BUDGET} samples each: {detail}", capsys)


# -- 6. semantics consistency --------------------------------------------------------------------------------------


def test_criterion_6_semantics_consistency(capsys):
    env = GridEnv()
    reg = env.predicates
    rng = np.random.default_rng(6)
    pairs = bad = guard_pairs = guard_bad = 0
    while pairs < 10_000:
        spec = random_spec(rng, depth=5)
        T = int(rng.integers(1, 7))
        states = rng.integers(-1, 5, size=(10, T + 1, 2)).astype(float)
        states[5:] += rng.uniform(-0.5, 0.5, size=states[5:].shape)
        b = batch_eval_bool(spec, states, reg)
        q = batch_eval_quant(spec, states, reg)
        bad += int(np.sum(b != (q > 0)))
        pairs += len(states)
        m = compile_spec(spec)
        s = states.reshape(-1, 2)
        v = rng.choice([-2.0, -0.5, 0.0, 0.5, 3.0, INF], size=(len(s), m.n_registers))
        for t in m.transitions:
            gb = np.broadcast_to(guard_bool(t.guard, s, v, reg), (len(s),))
            gq = np.broadcast_to(guard_quant(t.guard, s, v, reg), (len(s),))
            guard_bad += int(np.sum(gb != (gq > 0)))
            guard_pairs += len(s)
    ok = bad == 0 and guard_bad == 0
    assert report(6, ok, f"{pairs} (spec, rollout) pairs, {bad} disagreements; "
                         f"{guard_pairs} (guard, state) pairs, {guard_bad} disagreements", capsys)


# -- 7. determinism --------------------------------------------------------------------------------------------


def test_criterion_7_cli_training_is_reproducible(tmp_path, capsys):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = main(["train", "phi1", "--seed", "7", "--budget", "6000", "--out", str(out)])
        assert code == 0
        outputs.append((out / "phi1-shaped-seed7.csv").read_bytes())
    capsys.readouterr()
    ok = outputs[0] == outputs[1] and outputs[0].count(b"\n") > 1
    assert report(7, ok, f"two `train phi1 --seed 7` runs, {len(outputs[0])} bytes each, "
                         f"{'identical' if outputs[0] == outputs[1] else 'DIFFERENT'}", capsys)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
