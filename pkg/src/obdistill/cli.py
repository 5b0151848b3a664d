"""Command-line entry point.

    obdistill distill --env toypong --oracle builtin:tracker --leaves 4 --out runs/pong
    obdistill eval --env toypong --policy runs/pong/tree.json --baseline builtin:tracker
    obdistill bench-inference --policy runs/pong/tree.json --samples 100000
    obdistill mask-report --env toypong --oracle builtin:tracker
    obdistill importances --policy runs/pong/tree.json

Settings resolve as: command-line flags, then a ``key=value`` file passed
with ``--config``, then built-in defaults (N=10, t=10^4). ``OBDISTILL_SEED``
overrides the seed. Reports go to stdout as JSON; failures exit non-zero
with a JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cart import feature_importance
from .codegen import (ProgramPolicy, ast_to_json, count_ifs, emit_text, parse_program, prune_program,
                      python_arguments, python_function, tree_to_program)
from .core import ConfigError, DistillConfig
from .envs import derive_seed, evaluate_return, make_env, rollout
from .features import detect_idle_features
from .imitation import TreePolicy, action_agreement, distill
from .oracle import Oracle, load_oracle

log = logging.getLogger("obdistill")

DEFAULTS = {"leaves": 8, "iters": 10, "transitions": 10_000, "seed": 0,
            "subroutine": "auto", "eval_episodes": 10, "jobs": 1, "epsilon": 1e-9,
            "weight_formula": "mean-min", "oblique": True, "style": "nested"}
INT_KEYS = {"leaves", "iters", "transitions", "seed", "eval_episodes", "jobs"}
FLOAT_KEYS = {"epsilon"}
BOOL_KEYS = {"oblique"}


class UsageError(Exception):
    pass


class LoadError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _error_exit(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def read_config_file(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{n}: unknown setting {key!r}")
        try:
            if key in INT_KEYS:
                out[key] = int(value)
            elif key in FLOAT_KEYS:
                out[key] = float(value)
            elif key in BOOL_KEYS:
                out[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                out[key] = value
        except ValueError:
            raise UsageError(f"{path}:{n}: bad value for {key}") from None
    return out


def resolve_settings(args) -> dict:
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    env_seed = os.environ.get("OBDISTILL_SEED")
    if env_seed:
        try:
            settings["seed"] = int(env_seed)
        except ValueError:
            raise UsageError("OBDISTILL_SEED must be an integer") from None
    return settings


# ---------------------------------------------------------------------------
# Policy loading
# ---------------------------------------------------------------------------

def load_policy(spec: str, env):
    """Load a tree (.json), program (.py/.txt), oracle network (.json) or builtin."""
    if spec.startswith("builtin:"):
        return load_oracle(spec)
    path = Path(spec)
    suffix = path.suffix.lower()
    if suffix not in (".json", ".py", ".txt"):
        raise LoadError(f"{spec}: unknown policy file type {suffix or '(none)'!r}")
    try:
        text = path.read_text()
    except OSError as exc:
        raise LoadError(f"{spec}: {exc.strerror}") from None
    if suffix == ".json":
        d = json.loads(text)
        if d.get("format") == "obdistill-tree/1":
            policy = TreePolicy.from_json(d)
            if tuple(policy.mask.original_names) != tuple(env.feature_names):
                raise LoadError(f"{spec}: tree was fitted on a different environment")
            return policy
        if "layers" in d:
            return load_oracle(path)
        raise LoadError(f"{spec}: JSON is neither a tree nor an oracle network")
    spec_a = env.action_spec
    node = parse_program(text, env.feature_names,
                         spec_a.names if spec_a.is_discrete else None,
                         None if spec_a.is_discrete else spec_a.dim)
    return ProgramPolicy(node, env.feature_names, spec_a)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def importance_report(policy: TreePolicy) -> list[dict]:
    names = policy.mask.names
    return [{"feature": ref.render(names), "ref": ref.to_json(), "importance": value}
            for ref, value in feature_importance(policy.tree).items()]


def cmd_distill(args) -> int:
    s = resolve_settings(args)
    env = make_env(args.env)
    oracle = load_oracle(args.oracle)
    try:
        config = DistillConfig(leaves=s["leaves"], iters=s["iters"], transitions=s["transitions"],
                               seed=s["seed"], subroutine=s["subroutine"],
                               eval_episodes=s["eval_episodes"], oblique=s["oblique"],
                               weight_formula=s["weight_formula"], epsilon=s["epsilon"],
                               jobs=s["jobs"])
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    run = distill(oracle, env, config)
    policy = run.policy()
    spec = env.action_spec
    program = prune_program(tree_to_program(run.best_tree, run.mask.names,
                                            spec.names if spec.is_discrete else None))
    out = Path(args.out)
    tree_doc = policy.to_json()
    tree_doc["env"] = env.name
    report = run.report()
    report["env"] = env.name
    report["oracle"] = args.oracle
    report["tree_leaves"] = run.best_tree.n_leaves
    report["program_if_count"] = count_ifs(program)
    write_atomic(out / "tree.json", dump_json(tree_doc))
    write_atomic(out / "program.py", emit_text(program, s["style"]))
    write_atomic(out / "program_ast.json", dump_json(ast_to_json(program)))
    write_atomic(out / "mask_report.json", dump_json(run.mask.report()))
    try:
        importances = importance_report(policy)
    except ValueError:
        importances = []
    write_atomic(out / "importances.json", dump_json(importances))
    write_atomic(out / "run_report.json", dump_json(report))
    print(dump_json({"out": str(out), "best_index": run.best_index,
                     "best_eval_mean": report["best_eval_mean"],
                     "oracle_normalized_score": report["oracle_normalized_score"]}), end="")
    return 0


def cmd_eval(args) -> int:
    s = resolve_settings(args)
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    env = make_env(args.env)
    policy = load_policy(args.policy, env)
    mean, std, returns = evaluate_return(policy, env, args.episodes, s["seed"], s["jobs"])
    report = {"env": env.name, "policy": args.policy, "episodes": args.episodes,
              "seed": s["seed"], "mean_return": mean, "std_return": std, "returns": returns}
    if args.baseline:
        base = load_policy(args.baseline, env)
        b_mean, b_std, _ = evaluate_return(base, env, args.episodes, s["seed"], s["jobs"])
        report["baseline"] = {"policy": args.baseline, "mean_return": b_mean, "std_return": b_std}
        report["normalized_score"] = mean / b_mean if b_mean else None
    if args.compare:
        other = load_policy(args.compare, env)
        report["agreement"] = {"policy": args.compare,
                               "fraction": action_agreement(policy, other, env,
                                                            args.episodes, s["seed"])}
    print(dump_json(report), end="")
    return 0


def _latency(fn, inputs) -> dict:
    times = np.empty(len(inputs))
    clock = time.perf_counter_ns
    for k, x in enumerate(inputs):
        t0 = clock()
        fn(x)
        times[k] = clock() - t0
    us = times / 1e3
    return {"mean_us": float(us.mean()), "p50_us": float(np.percentile(us, 50)),
            "p99_us": float(np.percentile(us, 99))}


def cmd_bench_inference(args) -> int:
    s = resolve_settings(args)
    if args.samples < 1000:
        raise UsageError("--samples must be >= 1000")
    path = Path(args.policy)
    if path.suffix != ".json":
        raise LoadError("bench-inference needs a tree .json policy")
    doc = json.loads(path.read_text())
    env = make_env(args.env or doc.get("env", ""))
    policy = load_policy(args.policy, env)
    if not isinstance(policy, TreePolicy):
        raise LoadError("bench-inference needs a tree .json policy")
    spec = env.action_spec
    program = tree_to_program(policy.tree, policy.mask.names,
                              spec.names if spec.is_discrete else None)
    prog_policy = ProgramPolicy(program, env.feature_names, spec)
    fn = python_function(emit_text(program))

    states, _ = rollout(policy, env, args.samples, derive_seed(s["seed"], "bench"))
    masked = policy.mask.apply(states)
    py_args = [python_arguments(fn, x, env.feature_names) for x in states]

    tree_actions = policy.tree.predict_batch(masked)
    prog_actions = [prog_policy.act(x) for x in states]
    py_actions = [fn(*a) for a in py_args]
    if spec.is_discrete:
        py_idx = [spec.names.index(a) for a in py_actions]
        agree = (np.asarray(prog_actions) == tree_actions) & (np.asarray(py_idx) == tree_actions)
    else:
        agree = (np.all(np.asarray(prog_actions) == tree_actions, axis=1)
                 & np.all(np.asarray(py_actions) == tree_actions, axis=1))

    report = {
        "samples": args.samples, "tree_nodes": policy.tree.n_nodes,
        "agreement": float(agree.mean()),
        "latency": {
            "tree": _latency(policy.tree.predict, list(masked)),
            "program": _latency(prog_policy.program, list(states)),
            "python": _latency(lambda a: fn(*a), py_args),
        },
    }
    if args.oracle:
        oracle = load_oracle(args.oracle)
        report["latency"]["oracle"] = _latency(oracle.act, list(states))
    print(dump_json(report), end="")
    return 0 if report["agreement"] == 1.0 else 1


def cmd_mask_report(args) -> int:
    s = resolve_settings(args)
    env = make_env(args.env)
    oracle: Oracle = load_oracle(args.oracle)
    probe, _ = rollout(oracle, env, s["transitions"], derive_seed(s["seed"], "probe"))
    mask = detect_idle_features(probe, s["epsilon"], env.feature_names)
    print(dump_json(mask.report()), end="")
    return 0


def cmd_importances(args) -> int:
    doc = json.loads(Path(args.policy).read_text())
    policy = TreePolicy.from_json(doc)
    print(dump_json(importance_report(policy)), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="obdistill", description="Distill oracle policies into oblique tree programs.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def positive(text):
        v = int(text)
        if v < 1:
            raise argparse.ArgumentTypeError("must be >= 1")
        return v

    def leaves(text):
        v = int(text)
        if v < 2:
            raise argparse.ArgumentTypeError("leaf budget K must be >= 2")
        return v

    d = sub.add_parser("distill", help="run the full imitation pipeline")
    d.add_argument("--env", required=True)
    d.add_argument("--oracle", required=True, help="oracle JSON path or builtin:NAME")
    d.add_argument("--leaves", type=leaves)
    d.add_argument("--iters", type=positive)
    d.add_argument("--transitions", type=positive)
    d.add_argument("--seed", type=int)
    d.add_argument("--subroutine", choices=["auto", "dagger", "qdagger"])
    d.add_argument("--eval-episodes", dest="eval_episodes", type=positive)
    d.add_argument("--weight-formula", dest="weight_formula", choices=["mean-min", "max-min"])
    d.add_argument("--no-oblique", dest="oblique", action="store_const", const=False)
    d.add_argument("--style", choices=["nested", "guard"])
    d.add_argument("--jobs", type=positive)
    d.add_argument("--config")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_distill)

    e = sub.add_parser("eval", help="evaluate a policy's return")
    e.add_argument("--env", required=True)
    e.add_argument("--policy", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int)
    e.add_argument("--baseline", help="oracle or policy for the normalized score")
    e.add_argument("--compare", help="second policy for action agreement")
    e.add_argument("--jobs", type=positive)
    e.add_argument("--config")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench-inference", help="time tree vs program inference")
    b.add_argument("--policy", required=True)
    b.add_argument("--samples", type=int, default=100_000)
    b.add_argument("--env")
    b.add_argument("--oracle")
    b.add_argument("--seed", type=int)
    b.set_defaults(func=cmd_bench_inference)

    m = sub.add_parser("mask-report", help="idle-feature mask from an oracle probe")
    m.add_argument("--env", required=True)
    m.add_argument("--oracle", required=True)
    m.add_argument("--transitions", type=positive)
    m.add_argument("--seed", type=int)
    m.add_argument("--config")
    m.set_defaults(func=cmd_mask_report)

    i = sub.add_parser("importances", help="feature importances of a tree")
    i.add_argument("--policy", required=True)
    i.set_defaults(func=cmd_importances)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _error_exit("UsageError", str(exc), 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        return _error_exit("UsageError", str(exc), 2)
    except (LoadError, FileNotFoundError) as exc:
        return _error_exit("LoadError", str(exc), 1)
    except Exception as exc:  # every failure leaves a machine-readable record
        return _error_exit(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
