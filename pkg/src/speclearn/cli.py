"""Command-line interface: ``python -m speclearn <command>``.

Commands
    compile  print the task monitor of a specification (text or graphviz)
    eval     judge a recorded trace against a specification
    train    learn a policy for a benchmark or a specification file
    report   samples needed to reach satisfaction thresholds

``--config FILE`` reads flat ``key = value`` lines.  Plain keys set ARS
options (``directions``, ``step_size``, ``hidden = 30,30`` ...); keys
prefixed ``env.`` set environment parameters and keys prefixed
``shaping.`` override ``c_lower``/``c_upper``.  The output directory
defaults to ``$SPECLEARN_OUT`` or ``./runs``.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .ars import REWARD_MODES, ArsConfig
from .augmented import AugmentedMDP, AugmentedRollout, read_trace
from .bench import (
    NESTED_SEQUENCE,
    SUITE,
    Benchmark,
    BenchmarkSuite,
    curve_filename,
    default_out_dir,
    read_curve_csv,
    run_benchmark,
    sample_complexity_report,
)
from .envs import CartPoleEnv, GridEnv, PointRobotEnv
from .lang import SpecSyntaxError, parse_spec_file
from .monitor import Const, MonitorError, compile_spec, expr_text, guard_text, to_dot, update_text, validate_monitor
from .policy import save_policy
from .semantics import Rollout, eval_bool, eval_quant

ENVS = {"point": PointRobotEnv, "cartpole": CartPoleEnv, "grid": GridEnv}


class ConfigError(ValueError):
    pass


def _parse_value(text: str):
    text = text.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if "," in text:
        return tuple(_parse_value(part) for part in text.split(",") if part.strip())
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key] = _parse_value(value)
    return out


def split_config(config: dict):
    """``(ArsConfig kwargs, env params, shaping overrides)``."""
    fields = {f.name for f in dataclasses.fields(ArsConfig)}
    ars, env, shaping = {}, {}, {}
    for key, value in config.items():
        if key.startswith("env."):
            env[key[4:]] = value
        elif key.startswith("shaping."):
            shaping[key[8:]] = float(value)
        elif key in fields:
            ars[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for key in ("hidden", "tltl_hidden"):
        if key in ars and not isinstance(ars[key], tuple):
            ars[key] = (ars[key],)
    return ars, env, shaping


def _load_spec(path, env_kind: str):
    env = ENVS[env_kind]()
    return env, parse_spec_file(path, env.predicates)


# ---------------------------------------------------------------------------
# compile


def monitor_text(monitor) -> str:
    regs = monitor.registers
    init = ", ".join(f"{r} = {expr_text(Const(x), regs)}" for r, x in zip(regs, monitor.init_values))
    lines = [
        f"states: {monitor.n_states}  registers: {monitor.n_registers}  transitions: {len(monitor.transitions)}",
        f"initial: {monitor.name(monitor.initial)}  {init}",
        "finals: " + ", ".join(monitor.name(f) for f in sorted(monitor.finals)),
    ]
    for f in sorted(monitor.finals):
        lines.append(f"rho({monitor.name(f)}) = {expr_text(monitor.rewards[f], regs)}")
    for t in monitor.transitions:
        updates = "; ".join(update_text(t, regs))
        lines.append(f"{monitor.name(t.source)} -> {monitor.name(t.target)}  [{guard_text(t.guard, regs)}]  {updates}".rstrip())
    return "\n".join(lines)


def cmd_compile(args) -> int:
    env, spec = _load_spec(args.spec_file, args.env)
    monitor = compile_spec(spec, split_conjuncts=not args.no_split)
    problems = validate_monitor(monitor)
    for problem in problems:
        print(f"invalid monitor: {problem}", file=sys.stderr)
    if problems:
        return 1
    print(to_dot(monitor) if args.emit == "dot" else monitor_text(monitor))
    return 0


# ---------------------------------------------------------------------------
# eval


def _read_columns(path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip() and not line.startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty trace")
    return rows


def cmd_eval(args) -> int:
    env, spec = _load_spec(args.spec_file, args.env)
    monitor = compile_spec(spec)
    rows = _read_columns(args.trace_file)
    d = env.state_dim
    states = np.array([[float(x) for x in row[1 : 1 + d]] for row in rows])
    zeta = Rollout(states, np.zeros((len(states) - 1, 0)))
    print(f"satisfied: {str(eval_bool(spec, zeta, env.predicates)).lower()}")
    if zeta.length >= 1:
        print(f"robustness: {eval_quant(spec, zeta, env.predicates)!r}")
    augmented_width = 1 + d + 1 + monitor.n_registers
    if len(rows[0]) > augmented_width and len(rows[-1]) >= augmented_width:
        with open(args.trace_file, encoding="utf-8") as fh:
            aug: AugmentedRollout = read_trace(fh, d, monitor.n_registers)
        mdp = AugmentedMDP(env, monitor)
        reward = mdp.terminal_reward(aug)
        print(f"monitor final state: {monitor.name(int(aug.monitor_states[-1]))}")
        print(f"monitor reward: {'bottom' if reward is None else repr(reward)}")
        print(f"shaped reward: {mdp.shaped_reward(aug)!r}")
    return 0


# ---------------------------------------------------------------------------
# train


def _resolve_target(target: str, env_kind: str) -> tuple[BenchmarkSuite, str]:
    if target in SUITE:
        return SUITE, target
    path = Path(target)
    if not path.is_file():
        raise KeyError(f"{target!r} is neither a benchmark ({', '.join(SUITE.names())}) nor a spec file")
    text = path.read_text(encoding="utf-8")
    bench = Benchmark(path.stem, env_kind, text, 200_000, 0.9)
    return BenchmarkSuite([bench]), bench.name


def cmd_train(args) -> int:
    ars_kw, env_kw, shaping_kw = split_config(read_config(args.config)) if args.config else ({}, {}, {})
    cfg = ArsConfig(**ars_kw)
    suite, name = _resolve_target(args.target, args.env)
    out_dir = Path(args.out) if args.out else default_out_dir()
    run = run_benchmark(
        name, cfg, seed=args.seed, mode=args.mode, budget=args.budget, out_dir=out_dir,
        env_params=env_kw, shaping_overrides=shaping_kw, stop_at_threshold=args.stop_at_threshold, suite=suite,
    )
    env, spec, monitor = suite[name].build(**env_kw)
    save_policy(run.result.policy, run.csv_path.with_suffix(".npz"), monitor)
    print(f"curve: {run.csv_path}")
    print(f"samples: {run.result.samples}")
    print(f"final satisfaction: {run.final_satisfaction:.3f}")
    if run.result.agreement_violations:
        print(f"agreement violations: {run.result.agreement_violations}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    thresholds = [float(t) for t in args.thresholds.split(",") if t.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    names = args.specs.split(",") if args.specs else list(NESTED_SEQUENCE)
    out_dir = Path(args.dir) if args.dir else default_out_dir()
    curves = {}
    for name in names:
        for seed in seeds:
            path = out_dir / curve_filename(name, args.mode, seed)
            if path.is_file():
                curves[(name, seed)] = read_curve_csv(path)
            elif not args.train_missing:
                raise FileNotFoundError(f"missing curve {path} (run `train {name} --seed {seed}` or pass --train-missing)")

    def runner(name, cfg=None, seed=0):
        return run_benchmark(name, cfg, seed=seed, mode=args.mode, out_dir=out_dir)

    report = sample_complexity_report(thresholds, seeds, names, curves, trimmed=args.trimmed, runner=runner)
    print(report.format())
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speclearn", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="print the task monitor of a specification")
    p.add_argument("spec_file")
    p.add_argument("--emit", choices=("text", "dot"), default="text")
    p.add_argument("--env", choices=sorted(ENVS), default="point")
    p.add_argument("--no-split", action="store_true", help="one register per ensuring clause")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("eval", help="judge a tab-separated trace against a specification")
    p.add_argument("spec_file")
    p.add_argument("trace_file")
    p.add_argument("--env", choices=sorted(ENVS), default="point")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train on a benchmark or a spec file")
    p.add_argument("target", help=f"benchmark name ({', '.join(SUITE.names())}) or spec file")
    p.add_argument("--mode", choices=REWARD_MODES, default="shaped")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=None, help="sample rollouts")
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--env", choices=("point", "cartpole"), default="point", help="environment for a spec file")
    p.add_argument("--stop-at-threshold", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="samples needed to reach satisfaction thresholds")
    p.add_argument("--thresholds", default="0.3,0.5,0.7,0.9")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--specs", default=None, help=f"comma-separated benchmarks (default {','.join(NESTED_SEQUENCE)})")
    p.add_argument("--mode", choices=REWARD_MODES, default="shaped")
    p.add_argument("--dir", default=None, help="directory holding curve CSVs")
    p.add_argument("--trimmed", action="store_true", help="drop the best and worst run")
    p.add_argument("--train-missing", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SpecSyntaxError as exc:
        print(exc, file=sys.stderr)
    except (MonitorError, ConfigError, KeyError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
