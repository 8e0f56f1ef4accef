"""Command-line front end: ``vlbirl <command> [options]``.

Commands: gen-expert, train, evaluate, compare, verify-theory, sweep.

Settings resolve in three layers: built-in defaults, then an INI file given by
``--config`` (one section per module), then command-line flags. Exit codes are
0 on success, 1 on usage or configuration errors and 2 on runtime or numerical
failures.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import fields

import numpy as np

from . import __version__
from .approximator import NonFiniteGradientError, save_network
from .baselines import behavior_cloning, js_imitator_train
from .env import ENV_NAMES, UniformRandomPolicy, corrupt_policy, load_trajectories, make_env, rollout, save_trajectories
from .evaluation import (JENSEN_FUNCTIONS, EvalReport, argmax_consistency, compare_reports, comparison_to_csv,
                         episode_returns, ile, mean_return_eval, render_table, verify_jensen_gap)
from .optimality import bernoulli_reverse_kl
from .policy import (load_model, optimal_expert, policy_evaluation, save_model, train_continuous_expert,
                     value_iteration)
from .trainer import TrainConfig, TrainingDiverged, TrainReport, _evaluate, config_for, train

METHODS = ("vlbirl", "bc", "gail_js")
SUITES = ("default", "jensen", "kl")
MIN_THEORY_SAMPLES = 10_000


class UsageError(Exception):
    """Bad flags, bad config or bad input files (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# configuration


def _parse_int_list(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_TYPE_PARSERS = {"int": int, "float": float, "str": str, "bool": _parse_bool, "tuple": _parse_int_list}

SCHEMA: dict[str, dict] = {
    "run": {"env": str, "method": str, "seed": int, "expert": str, "out": str},
    "expert": {"n_trajectories": int, "noise_eps": float, "eval_episodes": int},
    "trainer": {f.name: _TYPE_PARSERS[str(f.type)] for f in fields(TrainConfig)},
    "bc": {"epochs": int, "lr": float, "arch": str, "patience": int},
    "compare": {"alpha": float},
    "sweep": {"counts": _parse_int_list},
    "theory": {"suite": str, "n_samples": int},
}

DEFAULTS = {
    "run": {"env": "gridworld", "method": "vlbirl", "seed": 0, "expert": None, "out": "runs"},
    "expert": {"n_trajectories": 50, "noise_eps": 0.0, "eval_episodes": 50},
    "trainer": {},
    "bc": {"epochs": 500, "lr": 0.05, "arch": "tabular", "patience": 10},
    "compare": {"alpha": 0.01},
    "sweep": {"counts": (1, 5, 25, 50)},
    "theory": {"suite": "default", "n_samples": 100_000},
}

# flag dest -> (section, key)
FLAG_KEYS = {
    "env": ("run", "env"), "method": ("run", "method"), "seed": ("run", "seed"), "expert": ("run", "expert"),
    "out": ("run", "out"), "n_trajectories": ("expert", "n_trajectories"), "noise_eps": ("expert", "noise_eps"),
    "lambda_var": ("trainer", "lambda_var"), "iterations": ("trainer", "n_iterations"),
    "eval_episodes": ("trainer", "eval_episodes"), "alpha": ("compare", "alpha"), "counts": ("sweep", "counts"),
    "suite": ("theory", "suite"), "n_samples": ("theory", "n_samples"),
}


def read_config(path: str) -> dict:
    """Parse an INI file against :data:`SCHEMA`; errors name the offending key."""
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise UsageError(f"{path}: cannot parse config ({exc})") from exc
    out: dict = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise UsageError(f"{path}: unknown key '{key}' in section [{section}]")
            try:
                out.setdefault(section, {})[key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise UsageError(f"{path}: bad value for [{section}] {key} = {raw!r} ({exc})") from exc
    return out


def resolve(args: argparse.Namespace) -> dict:
    settings = {s: dict(v) for s, v in DEFAULTS.items()}
    if getattr(args, "config", None):
        for section, vals in read_config(args.config).items():
            settings[section].update(vals)
    for dest, (section, key) in FLAG_KEYS.items():
        val = getattr(args, dest, None)
        if val is not None:
            settings[section][key] = tuple(val) if isinstance(val, list) else val
    return settings


def trainer_config(settings: dict, spec) -> TrainConfig:
    run = settings["run"]
    try:
        return config_for(spec, seed=run["seed"], **settings["trainer"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid [trainer] settings: {exc}") from exc


def _file_digest(path: str | None) -> str | None:
    if not path or not os.path.exists(path):
        return None
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def config_hash(settings: dict, sections=("run", "trainer", "bc")) -> str:
    """Digest of everything that shapes a run except its seed and output root."""
    view = {s: settings[s] for s in sections}
    view["run"] = {k: v for k, v in view["run"].items() if k not in ("seed", "out")}
    view["expert_file"] = _file_digest(settings["run"].get("expert"))
    blob = json.dumps(view, sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:10]


def make_run_dir(root: str, stem: str) -> str:
    """``root/stem``, or ``root/stem-r2``, ``-r3``... if taken; never reuses a directory."""
    os.makedirs(root, exist_ok=True)
    path, k = os.path.join(root, stem), 1
    while True:
        try:
            os.mkdir(path)
            return path
        except FileExistsError:
            k += 1
            path = os.path.join(root, f"{stem}-r{k}")


def write_settings(path: str, settings: dict, sections) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    for s in sections:
        cp[s] = {}
        for k in sorted(settings[s]):
            v = settings[s][k]
            if v is None:
                continue
            cp[s][k] = " ".join(str(x) for x in v) if isinstance(v, tuple) else str(v)
    with open(path, "w") as fh:
        cp.write(fh)


# --------------------------------------------------------------------------
# commands


def _spec(name: str):
    try:
        return make_env(name)
    except KeyError as exc:
        raise UsageError(f"unknown env {name!r}; registered: {', '.join(ENV_NAMES)}") from exc


def cmd_gen_expert(args, settings) -> int:
    run, ex = settings["run"], settings["expert"]
    spec = _spec(run["env"])
    if args.out is None:
        raise UsageError("gen-expert needs --out (trajectory file path)")
    if ex["n_trajectories"] < 1:
        raise UsageError(f"--n-trajectories must be >= 1, got {ex['n_trajectories']}")
    eps = ex["noise_eps"]
    if not 0.0 <= eps <= 1.0:
        raise UsageError(f"--noise-eps must lie in [0, 1], got {eps}")
    out = args.out
    parent = os.path.dirname(os.path.abspath(out))
    if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
        raise UsageError(f"cannot write trajectory file: {out}")

    extra = {}
    if spec.is_tabular:
        expert = optimal_expert(spec)
    else:
        expert = train_continuous_expert(spec, seed=run["seed"])
        save_model(out + ".policy", expert)
        extra["expert_policy"] = os.path.basename(out) + ".policy"
    source = corrupt_policy(expert, eps) if eps > 0 else expert
    trajs = rollout(spec, source, ex["n_trajectories"], seed=run["seed"])
    eval_seed = TrainConfig.eval_seed
    mean, std = mean_return_eval(spec, source, ex["eval_episodes"], eval_seed)
    save_trajectories(out, trajs, spec.name, run["seed"], noise_eps=eps, expert_mean_return=mean,
                      expert_std_return=std, expert_eval_episodes=ex["eval_episodes"], **extra)
    reached = sum(1 for t in trajs if t.transitions and t.transitions[-1].done)
    print(f"wrote {len(trajs)} trajectories to {out} (goal reached in {reached}/{len(trajs)}, "
          f"expert return {mean:.4f} +- {std:.4f})")
    return 0


def _load_expert(settings):
    path = settings["run"]["expert"]
    if not path:
        raise UsageError("no expert trajectory file given (--expert or [run] expert)")
    try:
        trajs, meta = load_trajectories(path)
    except FileNotFoundError as exc:
        raise UsageError(f"expert trajectory file not found: {path}") from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not trajs:
        raise UsageError(f"expert trajectory file is empty: {path}")
    if meta.get("spec") and meta["spec"] != settings["run"]["env"]:
        raise UsageError(f"{path} holds {meta['spec']} trajectories but env is {settings['run']['env']}")
    return trajs, meta


def _expert_policy(spec, path, meta):
    if spec.is_tabular or not meta.get("expert_policy"):
        return None
    ckpt = os.path.join(os.path.dirname(os.path.abspath(path)), meta["expert_policy"])
    return load_model(ckpt, spec) if os.path.exists(ckpt) else None


def _bc_arch(text: str):
    return "tabular" if text.strip() == "tabular" else _parse_int_list(text)


def fit(method: str, spec, trajs, cfg: TrainConfig, settings: dict, expert_policy=None, on_eval=None):
    """Train one method; returns ``(policy, report, reward_head, critic, classifier)``."""
    if method == "vlbirl":
        res = train(spec, trajs, cfg, expert_policy, on_eval)
        return res.policy, res.report, res.reward_head, res.critic, res.classifier
    if method == "gail_js":
        pol, rep = js_imitator_train(spec, trajs, cfg, expert_policy, on_eval)
        return pol, rep, None, None, None
    if method == "bc":
        b = settings["bc"]
        arch = _bc_arch(b["arch"])
        if arch == "tabular" and not spec.is_tabular:
            arch = cfg.learner_hidden
        pol = behavior_cloning(spec, trajs, arch, b["epochs"], b["lr"], cfg.seed, b["patience"])
        expert_values = policy_evaluation(spec, expert_policy) if spec.is_tabular and expert_policy else None
        if spec.is_tabular and expert_values is None:
            expert_values = value_iteration(spec)[0]
        rep = TrainReport()
        nan = float("nan")
        rep.add(_evaluate(spec, pol, cfg, expert_values, expert_policy, 0, [nan] * 4, time.perf_counter()))
        rep.final_returns = list(episode_returns(spec, pol, cfg.eval_episodes, cfg.eval_seed, cfg.eval_deterministic))
        return pol, rep, None, None, None
    raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def _save_checkpoint(folder: str, policy, head=None, critic=None, clf=None) -> None:
    os.makedirs(folder, exist_ok=True)
    save_model(os.path.join(folder, "policy.bin"), policy)
    if critic is not None:
        save_model(os.path.join(folder, "critic.bin"), critic)
    if head is not None:
        save_network(os.path.join(folder, "reward.bin"), head.net, deterministic=head.deterministic_mode)
    if clf is not None:
        save_network(os.path.join(folder, "classifier.bin"), clf.net)


def train_run(settings: dict, trajs, meta: dict, run_dir: str) -> dict:
    run = settings["run"]
    method = run["method"]
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    spec = _spec(run["env"])
    cfg = trainer_config(settings, spec)
    expert_policy = _expert_policy(spec, run["expert"], meta)
    ckpt_root = os.path.join(run_dir, "checkpoints")

    def on_eval(res):
        it = res.report.final.iteration
        _save_checkpoint(os.path.join(ckpt_root, f"iter_{it:06d}"), res.policy, res.reward_head, res.critic,
                         res.classifier)

    policy, report, head, critic, clf = fit(method, spec, trajs, cfg, settings, expert_policy, on_eval)
    _save_checkpoint(os.path.join(ckpt_root, "final"), policy, head, critic, clf)
    report.to_csv(os.path.join(run_dir, "report.csv"))
    report.timings_to_csv(os.path.join(run_dir, "timings.csv"))
    returns = np.asarray(report.final_returns)
    ev = EvalReport(method, spec.name, {cfg.seed: float(returns.mean())},
                    {cfg.seed: float(returns.std(ddof=1))}, {cfg.seed: report.final.ile}, len(returns))
    ev.to_csv(os.path.join(run_dir, "eval.csv"))
    summary = {
        "method": method, "env": spec.name, "seed": cfg.seed, "config_hash": config_hash(settings),
        "expert": run["expert"], "n_expert_trajectories": len(trajs),
        "mean_return": float(returns.mean()), "std_return": float(returns.std(ddof=1)),
        "n_episodes": int(len(returns)), "initial_ile": report.records[0].ile, "final_ile": report.final.ile,
        "expert_mean_return": meta.get("expert_mean_return"),
    }
    if method == "vlbirl" and spec.is_tabular:
        summary["argmax_consistency"] = argmax_consistency(head, critic, spec, optimal_expert(spec))
    with open(os.path.join(run_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    write_settings(os.path.join(run_dir, "config.ini"), settings, ("run", "trainer", "bc"))
    return summary


def cmd_train(args, settings) -> int:
    trajs, meta = _load_expert(settings)
    run = settings["run"]
    run_dir = make_run_dir(run["out"], f"{run['method']}-{run['env']}-{config_hash(settings)}-seed{run['seed']}")
    summary = train_run(settings, trajs, meta, run_dir)
    print(f"{summary['method']} on {summary['env']} seed {summary['seed']}: return "
          f"{summary['mean_return']:.4f} +- {summary['std_return']:.4f}, ILE {summary['final_ile']:.4f}")
    print(f"outputs in {run_dir}")
    return 0


def _read_run(run_dir: str):
    cfg_path = os.path.join(run_dir, "config.ini")
    ckpt = os.path.join(run_dir, "checkpoints", "final", "policy.bin")
    if not (os.path.exists(cfg_path) and os.path.exists(ckpt)):
        raise UsageError(f"not a completed run directory: {run_dir}")
    settings = {s: dict(v) for s, v in DEFAULTS.items()}
    for section, vals in read_config(cfg_path).items():
        settings[section].update(vals)
    spec = _spec(settings["run"]["env"])
    return settings, spec, load_model(ckpt, spec)


def cmd_evaluate(args, settings) -> int:
    runs = [_read_run(d) for d in args.runs]
    methods = {s["run"]["method"] for s, _, _ in runs}
    envs = {spec.name for _, spec, _ in runs}
    if len(methods) != 1 or len(envs) != 1:
        raise UsageError("evaluate expects runs of a single method on a single env")
    n = settings["trainer"].get("eval_episodes", TrainConfig.eval_episodes)
    if n < 2:
        raise UsageError(f"--eval-episodes must be >= 2, got {n}")
    rep = EvalReport(methods.pop(), envs.pop(), {}, n_episodes=n)
    for (s, spec, pol), d in zip(runs, args.runs):
        cfg = trainer_config(s, spec)
        seed = s["run"]["seed"]
        if seed in rep.per_seed_returns:
            raise UsageError(f"two runs share seed {seed}: {d}")
        mean, std = mean_return_eval(spec, pol, n, cfg.eval_seed, cfg.eval_deterministic)
        rep.per_seed_returns[seed], rep.per_seed_std[seed] = mean, std
        if spec.is_tabular:
            rep.per_seed_ile[seed] = ile(value_iteration(spec)[0],
                                             policy_evaluation(spec, pol, deterministic=cfg.eval_deterministic))
    if args.out:
        rep.to_csv(args.out)
    print(f"{rep.method} on {rep.env}: {rep.mean:.4f} +- {rep.std:.4f} over {len(rep.per_seed_returns)} seeds"
          + (f", ILE {rep.ile:.4f}" if rep.per_seed_ile else ""))
    return 0


def cmd_compare(args, settings) -> int:
    if len(args.reports) < 2:
        raise UsageError("compare needs at least two report files")
    reports = []
    for p in args.reports:
        if not os.path.exists(p):
            raise UsageError(f"report file not found: {p}")
        try:
            reports.append(EvalReport.from_csv(p))
        except (ValueError, KeyError) as exc:
            raise UsageError(str(exc)) from exc
    try:
        compare_reports(reports, settings["compare"]["alpha"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(render_table(reports))
    if args.out:
        comparison_to_csv(reports, args.out)
    return 0


def _jensen_suite(rng, n_samples: int, lines: list) -> bool:
    ok = True
    settings = [("sigmoid", rng.uniform(-4, 4), rng.uniform(0.05, 3.0)) for _ in range(100)]
    settings += [(name, rng.uniform(-2, 2), rng.uniform(0.05, 2.0))
                 for name in JENSEN_FUNCTIONS if name != "sigmoid" for _ in range(10)]
    for name in JENSEN_FUNCTIONS:
        runs = [verify_jensen_gap(f, mu, sd, n_samples=n_samples, rng=rng) for f, mu, sd in settings if f == name]
        bad = sum(r.violated for r in runs)
        worst = max(r.empirical_gap / r.bound if r.bound > 0 else r.empirical_gap for r in runs)
        lines.append(f"jensen {name}: {len(runs)} settings, {bad} violations, worst gap/bound {worst:.4f}")
        ok &= bad == 0
    return ok


def _kl_suite(rng, n_samples: int, lines: list) -> bool:
    n = max(n_samples, MIN_THEORY_SAMPLES)
    q = rng.uniform(0, 1, n)
    p = np.where(rng.random(n) < 0.1, q, rng.uniform(0, 1, n))
    kl = bernoulli_reverse_kl(q, p)
    nonneg = bool(np.all(kl >= 0))
    clamp = lambda x: np.clip(x, 1e-6, 1 - 1e-6)
    close = np.abs(clamp(q) - clamp(p)) < 1e-9
    zero_iff = bool(np.all((kl < 1e-12) == close))
    spot = bernoulli_reverse_kl(0.8, 0.5)
    spot_ok = abs(spot - 0.19274) <= 1e-5
    lines.append(f"kl: {n} pairs, non-negative {nonneg}, zero iff equal {zero_iff}, KL(0.8, 0.5) = {spot:.6f}")
    return nonneg and zero_iff and spot_ok


def cmd_verify_theory(args, settings) -> int:
    th = settings["theory"]
    if th["suite"] not in SUITES:
        raise UsageError(f"unknown suite {th['suite']!r}; choose from {', '.join(SUITES)}")
    if th["n_samples"] < MIN_THEORY_SAMPLES:
        raise UsageError(f"--n-samples must be >= {MIN_THEORY_SAMPLES}, got {th['n_samples']}")
    rng = np.random.default_rng(settings["run"]["seed"])
    lines: list[str] = []
    ok = True
    if th["suite"] in ("default", "jensen"):
        ok &= _jensen_suite(rng, th["n_samples"], lines)
    if th["suite"] in ("default", "kl"):
        ok &= _kl_suite(rng, th["n_samples"], lines)
    lines.append("PASS" if ok else "FAIL")
    print("\n".join(lines))
    if args.out:
        run_dir = make_run_dir(args.out, f"theory-{th['suite']}-seed{settings['run']['seed']}")
        with open(os.path.join(run_dir, "theory.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0 if ok else 2


SWEEP_COLUMNS = ["count", "mean_return", "std_return", "normalized_return", "random_return", "expert_return", "ile"]


def normalize_return(value: float, random_return: float, expert_return: float) -> float:
    if expert_return == random_return:
        raise ValueError("expert and random returns coincide; normalization undefined")
    return (value - random_return) / (expert_return - random_return)


def cmd_sweep(args, settings) -> int:
    counts = list(settings["sweep"]["counts"])
    if not counts:
        raise UsageError("sweep needs at least one trajectory count")
    if any(b <= a for a, b in zip(counts, counts[1:])) or counts[0] < 1:
        raise UsageError(f"counts must be positive and strictly ascending, got {counts}")
    trajs, meta = _load_expert(settings)
    if counts[-1] > len(trajs):
        raise UsageError(f"count {counts[-1]} exceeds the {len(trajs)} trajectories in {settings['run']['expert']}")
    if meta.get("expert_mean_return") is None:
        raise UsageError("expert file metadata lacks expert_mean_return; regenerate it with gen-expert")
    run = settings["run"]
    spec = _spec(run["env"])
    cfg = trainer_config(settings, spec)
    expert_ret = float(meta["expert_mean_return"])
    random_ret = mean_return_eval(spec, UniformRandomPolicy(spec), cfg.eval_episodes, cfg.eval_seed)[0]
    root = make_run_dir(run["out"], f"sweep-{run['method']}-{run['env']}-{config_hash(settings)}-seed{run['seed']}")
    rows = []
    for k in counts:
        sub = make_run_dir(root, f"count{k:04d}")
        s = train_run(settings, trajs[:k], meta, sub)
        rows.append([k, s["mean_return"], s["std_return"], normalize_return(s["mean_return"], random_ret, expert_ret),
                     random_ret, expert_ret, s["final_ile"]])
        print(f"count {k}: return {s['mean_return']:.4f} normalized {rows[-1][3]:.4f}")
    with open(os.path.join(root, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r[0], *(repr(float(v)) for v in r[1:])])
    write_settings(os.path.join(root, "config.ini"), settings, ("run", "trainer", "bc", "sweep"))
    print(f"outputs in {root}")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vlbirl", description="Variational lower-bound IRL experiments at desk scale.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, out_help):
        sp.add_argument("--config", help="INI file with per-module sections")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help=out_help)

    g = sub.add_parser("gen-expert", help="roll out the optimal (optionally noisy) expert")
    common(g, "trajectory file to write")
    g.add_argument("--env")
    g.add_argument("--n-trajectories", type=int)
    g.add_argument("--noise-eps", type=float)

    def training(sp):
        sp.add_argument("--env")
        sp.add_argument("--method", choices=METHODS)
        sp.add_argument("--expert", help="trajectory file from gen-expert")
        sp.add_argument("--lambda-var", type=float)
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--eval-episodes", type=int)

    t = sub.add_parser("train", help="train one method on one seed")
    common(t, "root directory for run folders (default runs)")
    training(t)

    s = sub.add_parser("sweep", help="train over increasing expert-trajectory counts")
    common(s, "root directory for run folders (default runs)")
    training(s)
    s.add_argument("--counts", type=int, nargs="+")

    e = sub.add_parser("evaluate", help="re-evaluate finished runs (one method, several seeds)")
    e.add_argument("runs", nargs="+", help="run directories")
    e.add_argument("--config")
    e.add_argument("--eval-episodes", type=int)
    e.add_argument("--out", help="evaluation CSV to write")

    c = sub.add_parser("compare", help="pairwise Welch tests between evaluation CSVs")
    c.add_argument("reports", nargs="+")
    c.add_argument("--config")
    c.add_argument("--alpha", type=float)
    c.add_argument("--out", help="comparison CSV to write")

    v = sub.add_parser("verify-theory", help="numerical bound and divergence checks")
    common(v, "root directory for the result folder (optional)")
    v.add_argument("--suite", choices=SUITES)
    v.add_argument("--n-samples", type=int)
    return p


COMMANDS = {"gen-expert": cmd_gen_expert, "train": cmd_train, "evaluate": cmd_evaluate,
            "compare": cmd_compare, "verify-theory": cmd_verify_theory, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("vlbirl: a command is required (see --help)")
        settings = resolve(args)
        return COMMANDS[args.command](args, settings)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, NonFiniteGradientError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
