"""Experiment harness: config files, run directories, metrics, commands.

A run directory is self-describing: it always contains the fully resolved
config (every default spelled out), a manifest naming the code version and
seed, metrics as both JSONL and a flat CSV, the executed actions per epoch,
and the final model checkpoint.  Identical manifests reproduce identical
metrics bytes.

Config files are JSON with three layers: preset defaults ("desk" or
"paper"), the file's own values, then dotted-key command-line overrides like
``plan.K=200``.  Unknown keys are rejected with their full path.
"""

from __future__ import annotations

import copy
import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .agent import NS_EVAL, RunConfig, evaluate_policy, run
from .ensemble import TrainConfig, load_checkpoint, save_checkpoint
from .envs import make_env
from .mathcore import RngStream, pca_top2
from .planner import ExplorationSchedule, PlanConfig
from .tabular import generate_instances, tightness_sweep, verify_bound

OUTPUT_ROOT_ENV_VAR = "MBRLAB_OUTPUT_ROOT"
CSV_SCHEMA_VERSION = 1
METRICS_CSV_HEADER = "epoch,true_return,beta,model_loss_mean,planner_best_return"


class ConfigError(ValueError):
    """Bad config file, unknown key, or invalid command usage."""


def _fmt(value) -> str:
    """Shortest round-trip decimal for floats so CSV bytes are reproducible."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


# -- config schema -------------------------------------------------------------

_PLAN_DEFAULTS = PlanConfig()
_SCHEDULE_DEFAULTS = ExplorationSchedule()
_TRAIN_DEFAULTS = TrainConfig()

BASE_CONFIG = {
    "preset": "desk",
    "env": {"name": None, "overrides": {}},
    "plan": {
        "K": _PLAN_DEFAULTS.K,
        "horizon": _PLAN_DEFAULTS.horizon,
        "elite_count": _PLAN_DEFAULTS.elite_count,
        "alpha": _PLAN_DEFAULTS.alpha,
        "max_iterations": _PLAN_DEFAULTS.max_iterations,
        "convergence_tol": _PLAN_DEFAULTS.convergence_tol,
        "gamma": _PLAN_DEFAULTS.gamma,
        "mu0": _PLAN_DEFAULTS.mu0,
        "sigma0": _PLAN_DEFAULTS.sigma0,
        "variance_floor": _PLAN_DEFAULTS.variance_floor,
        "fit_first_action_only": _PLAN_DEFAULTS.fit_first_action_only,
    },
    "schedule": {
        "mode": _SCHEDULE_DEFAULTS.mode,
        "beta_min": _SCHEDULE_DEFAULTS.beta_min,
        "beta_max": _SCHEDULE_DEFAULTS.beta_max,
        "e_min": _SCHEDULE_DEFAULTS.e_min,
        "e_max": _SCHEDULE_DEFAULTS.e_max,
        "fixed_beta": _SCHEDULE_DEFAULTS.fixed_beta,
    },
    "train": {
        "ensemble_size": _TRAIN_DEFAULTS.ensemble_size,
        "hidden": list(_TRAIN_DEFAULTS.hidden),
        "reward_hidden": list(_TRAIN_DEFAULTS.reward_hidden),
        "learning_rate": _TRAIN_DEFAULTS.learning_rate,
        "reward_learning_rate": _TRAIN_DEFAULTS.reward_learning_rate,
        "batch_size": _TRAIN_DEFAULTS.batch_size,
        "epochs": _TRAIN_DEFAULTS.epochs,
        "logvar_min": _TRAIN_DEFAULTS.logvar_min,
        "logvar_max": _TRAIN_DEFAULTS.logvar_max,
        "bootstrap": _TRAIN_DEFAULTS.bootstrap,
    },
    "loop": {
        "steps_per_epoch": 1000,
        "total_epochs": None,
        "warmup_epochs": 1,
        "eval_episodes": 3,
        "eval_seed": 10_000,
    },
    "seed": 0,
}

# presets overlay the base before the config file does
PRESETS = {
    "paper": {
        # Paper-scale settings; heavy, intended for overnight runs.
        "plan": {"K": 500, "horizon": 30, "elite_count": 100, "alpha": 0.01,
                 "max_iterations": 20, "sigma0": 0.1},
        "schedule": {"e_min": 50, "e_max": 300},
        "train": {"hidden": [500, 500, 500], "reward_hidden": [500, 500, 500]},
        "loop": {"steps_per_epoch": 1000},
    },
    "desk": {
        # Laptop-scale settings; minutes, not days.
        "plan": {"K": 128, "horizon": 15, "elite_count": 16, "alpha": 0.25,
                 "max_iterations": 6, "sigma0": 0.5},
        "schedule": {"e_min": 2, "e_max": 8},
        "train": {"hidden": [64, 64], "reward_hidden": [64, 64]},
        "loop": {"steps_per_epoch": 200},
    },
}

REQUIRED_KEYS = ("env.name", "loop.total_epochs")


def _merge(base: dict, overlay: dict, path: str = "") -> None:
    for key, value in overlay.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(base[key], dict) and here != "env.overrides":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here} must be a mapping")
            _merge(base[key], value, here)
        else:
            base[key] = value


def _get_path(cfg: dict, dotted: str):
    node = cfg
    for part in dotted.split("."):
        node = node[part]
    return node


def parse_override(text: str) -> tuple[str, object]:
    """Parse a dotted-key override like ``plan.K=200`` (value parsed as JSON)."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not of the form key=value")
    key, _, raw = text.partition("=")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings allowed, e.g. schedule.mode=off
    return key.strip(), value


def resolve_config(raw: dict, overrides: list[str] | None = None) -> dict:
    """Overlay preset, file, and CLI values onto the full default tree.

    The result spells out every parameter explicitly and re-resolves to
    itself, so the snapshot written into a run directory is the single source
    of truth for reproduction.
    """
    preset = raw.get("preset", BASE_CONFIG["preset"])
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset '{preset}'; known: {sorted(PRESETS)}")
    resolved = copy.deepcopy(BASE_CONFIG)
    resolved["preset"] = preset
    _merge(resolved, copy.deepcopy(PRESETS[preset]))
    _merge(resolved, raw if "preset" not in raw else
           {k: v for k, v in raw.items() if k != "preset"})
    for text in overrides or []:
        key, value = parse_override(text)
        node = resolved
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key: {key}")
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"unknown config key: {key}")
        node[parts[-1]] = value
    for dotted in REQUIRED_KEYS:
        if _get_path(resolved, dotted) is None:
            raise ConfigError(f"missing required key: {dotted}")
    return resolved


def load_config(path, overrides: list[str] | None = None) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return resolve_config(raw, overrides)


def config_to_run(resolved: dict) -> RunConfig:
    plan = dict(resolved["plan"])
    schedule = dict(resolved["schedule"])
    train = dict(resolved["train"])
    train["hidden"] = tuple(train["hidden"])
    train["reward_hidden"] = tuple(train["reward_hidden"])
    loop = resolved["loop"]
    return RunConfig(
        env_name=resolved["env"]["name"],
        env_overrides=dict(resolved["env"]["overrides"]),
        plan=PlanConfig(**plan),
        schedule=ExplorationSchedule(**schedule),
        train=TrainConfig(**train),
        steps_per_epoch=loop["steps_per_epoch"],
        total_epochs=loop["total_epochs"],
        warmup_epochs=loop["warmup_epochs"],
        eval_episodes=loop["eval_episodes"],
        seed=resolved["seed"],
    ).validate()


# -- run directories -----------------------------------------------------------

def output_root(explicit=None) -> Path:
    if explicit is not None:
        return Path(explicit)
    return Path(os.environ.get(OUTPUT_ROOT_ENV_VAR, "runs"))


def write_metrics(run_dir: Path, records) -> None:
    with open(run_dir / "metrics.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps({
                "epoch": rec.epoch,
                "true_return": rec.true_return,
                "beta": rec.beta,
                "model_loss_mean": rec.model_loss_mean,
                "planner_best_return": rec.planner_best_return,
                "planner_iterations_mean": rec.planner_iterations_mean,
            }, sort_keys=True) + "\n")
    with open(run_dir / "metrics.csv", "w") as fh:
        fh.write(METRICS_CSV_HEADER + "\n")
        for rec in records:
            fh.write(",".join([
                _fmt(rec.epoch), _fmt(rec.true_return), _fmt(rec.beta),
                _fmt(rec.model_loss_mean), _fmt(rec.planner_best_return),
            ]) + "\n")


def write_actions(run_dir: Path, records) -> None:
    np.savez(run_dir / "actions.npz",
             **{f"epoch_{rec.epoch}": rec.actions for rec in records})


def run_single(resolved: dict, run_dir: Path, run_id: str) -> dict:
    """Execute one seed's run and persist everything into `run_dir`."""
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = {
        "run_id": run_id,
        "code_version": __version__,
        "seeds": [resolved["seed"]],
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "layout": {
            "config": "config.json",
            "metrics_csv": "metrics.csv",
            "metrics_jsonl": "metrics.jsonl",
            "actions": "actions.npz",
            "checkpoint": "checkpoint.npz",
            "evaluation": "eval.json",
        },
    }
    with open(run_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    config = config_to_run(resolved)
    result = run(config)
    write_metrics(run_dir, result.records)
    write_actions(run_dir, result.records)
    save_checkpoint(run_dir / "checkpoint.npz", result.model, result.reward)

    summary = {"run_id": run_id, "seed": resolved["seed"]}
    if config.eval_episodes > 0:
        env = make_env(config.env_name, config.env_overrides)
        eval_rng = RngStream(resolved["loop"]["eval_seed"] + resolved["seed"], (NS_EVAL,))
        mean, std = evaluate_policy(result.model, result.reward, env,
                                    config.eval_episodes, eval_rng, config.plan)
        summary["eval_return_mean"] = mean
        summary["eval_return_std"] = std
        summary["eval_episodes"] = config.eval_episodes
        with open(run_dir / "eval.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return summary


def cmd_train(config_path, overrides=None, seeds=None, out=None, workers=1,
              name=None) -> list[Path]:
    """Run one config across seeds; one self-contained directory per seed."""
    resolved = load_config(config_path, overrides)
    seeds = list(seeds) if seeds else [resolved["seed"]]
    name = name or Path(config_path).stem
    base = output_root(out) / name
    jobs = []
    for seed in seeds:
        per_seed = copy.deepcopy(resolved)
        per_seed["seed"] = int(seed)
        jobs.append((per_seed, base / f"seed{seed}", f"{name}-seed{seed}"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda j: run_single(*j), jobs))
    else:
        for job in jobs:
            run_single(*job)
    return [j[1] for j in jobs]


def cmd_eval(run_dir, episodes=None, seed=None) -> dict:
    """Re-evaluate a finished run's checkpoint against the real environment."""
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    ckpt_path = run_dir / "checkpoint.npz"
    if not cfg_path.exists() or not ckpt_path.exists():
        raise ConfigError(f"{run_dir} is not a completed run directory "
                          "(needs config.json and checkpoint.npz)")
    with open(cfg_path) as fh:
        resolved = json.load(fh)
    config = config_to_run(resolved)
    episodes = episodes or config.eval_episodes or 3
    model, reward = load_checkpoint(ckpt_path)
    env = make_env(config.env_name, config.env_overrides)
    eval_seed = seed if seed is not None \
        else resolved["loop"]["eval_seed"] + resolved["seed"]
    mean, std = evaluate_policy(model, reward, env, episodes,
                                RngStream(eval_seed, (NS_EVAL,)), config.plan)
    out = {"eval_return_mean": mean, "eval_return_std": std,
           "eval_episodes": episodes, "seed": resolved["seed"]}
    with open(run_dir / "eval.json", "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def cmd_ablate(config_path, overrides=None, seeds=(0, 1), beta_max_sweep=None,
               out=None, workers=1) -> list[dict]:
    """Run the exploration-variant grid and summarize final evaluation returns.

    Variants: the progressive ramp, a fixed beta pinned at beta_max, and the
    no-exploration baseline.  An optional beta_max sweep adds one progressive
    variant per value.  The summary is recomputable from the per-run files.
    """
    resolved = load_config(config_path, overrides)
    name = Path(config_path).stem
    base = output_root(out) / f"{name}-ablation"
    variants: list[tuple[str, dict]] = [
        ("progressive", {"schedule": {"mode": "progressive"}}),
        ("fixed", {"schedule": {"mode": "fixed",
                                "fixed_beta": resolved["schedule"]["beta_max"]}}),
        ("off", {"schedule": {"mode": "off"}}),
    ]
    for value in beta_max_sweep or []:
        variants.append((f"progressive-bmax{value}",
                         {"schedule": {"mode": "progressive", "beta_max": value}}))

    jobs = []
    for variant, patch in variants:
        for seed in seeds:
            cfg = copy.deepcopy(resolved)
            _merge(cfg, copy.deepcopy(patch))
            cfg["seed"] = int(seed)
            jobs.append((variant, cfg, base / variant / f"seed{seed}",
                         f"{name}-{variant}-seed{seed}"))

    def _execute(job):
        variant, cfg, run_dir, run_id = job
        summary = run_single(cfg, run_dir, run_id)
        summary["variant"] = variant
        return summary

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_execute, jobs))
    else:
        summaries = [_execute(job) for job in jobs]

    rows = []
    for variant, _ in variants:
        returns = [s["eval_return_mean"] for s in summaries if s["variant"] == variant]
        rows.append({
            "variant": variant,
            "seeds": len(returns),
            "mean_return": float(np.mean(returns)),
            "std_return": float(np.std(returns)),
        })
    base.mkdir(parents=True, exist_ok=True)
    with open(base / "summary.csv", "w") as fh:
        fh.write("variant,seeds,mean_return,std_return\n")
        for row in rows:
            fh.write(f"{row['variant']},{row['seeds']},"
                     f"{_fmt(row['mean_return'])},{_fmt(row['std_return'])}\n")
    return rows


def cmd_verify_bound(instances=1000, seed=0, gammas=(0.9, 0.99), out=None,
                     sweep=False, max_states=8, max_actions=4, max_horizon=10):
    """Stress the return-gap bound on randomized tabular instances.

    Writes one CSV row per instance plus an optional tightness sweep, and
    returns (reports, failures, max_ratio) so the CLI can set exit code 3 on
    any violation.
    """
    for gamma in gammas:
        if not (0.0 <= gamma < 1.0):
            raise ConfigError(f"gamma must lie in [0, 1); got {gamma} "
                              "(the bound is undefined at gamma = 1)")
    out_dir = output_root(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    failures = 0
    max_ratio = 0.0
    for i, inst in enumerate(generate_instances(
            instances, seed, max_states=max_states, max_actions=max_actions,
            max_horizon=max_horizon, gammas=gammas)):
        report = verify_bound(inst.mdp, inst.model, inst.policy, inst.s0,
                              inst.a0, inst.H)
        if not report.holds:
            failures += 1
        if report.bound_value > 0:
            max_ratio = max(max_ratio, report.tree_error / report.bound_value)
        rows.append((i, inst, report))
    csv_path = out_dir / "bound_reports.csv"
    with open(csv_path, "w") as fh:
        fh.write("instance,num_states,num_actions,H,gamma,transition_scale,"
                 "reward_noise,policy_kind,tree_error,bound_value,epsilon_r_max,"
                 "epsilon_m,r_max,reward_gap_term,model_error_term,holds\n")
        for i, inst, rep in rows:
            fh.write(",".join([
                str(i), str(inst.mdp.num_states), str(inst.mdp.num_actions),
                str(inst.H), _fmt(inst.mdp.gamma), _fmt(inst.transition_scale),
                _fmt(inst.reward_noise), inst.policy_kind,
                _fmt(rep.tree_error), _fmt(rep.bound_value),
                _fmt(rep.epsilon_r_max), _fmt(rep.epsilon_m), _fmt(rep.r_max),
                _fmt(rep.reward_gap_term), _fmt(rep.model_error_term),
                str(rep.holds),
            ]) + "\n")
    if sweep:
        sweep_rows = tightness_sweep(seed=seed)
        with open(out_dir / "tightness_sweep.csv", "w") as fh:
            fh.write("gamma,H,transition_scale,instances,exact_zero_cases,"
                     "mean_tree_error,max_ratio,mean_ratio,violations\n")
            for r in sweep_rows:
                fh.write(",".join([
                    _fmt(r.gamma), str(r.H), _fmt(r.transition_scale),
                    str(r.instances), str(r.exact_zero_cases),
                    _fmt(r.mean_tree_error), _fmt(r.max_ratio),
                    _fmt(r.mean_ratio), str(r.violations),
                ]) + "\n")
    reports = [rep for _, _, rep in rows]
    return reports, failures, max_ratio


def load_run_actions(run_dir) -> dict[int, np.ndarray]:
    path = Path(run_dir) / "actions.npz"
    if not path.exists():
        raise ConfigError(f"{run_dir} has no logged actions (actions.npz missing)")
    with np.load(path) as data:
        return {int(key.split("_", 1)[1]): data[key].copy() for key in data.files}


def cmd_analyze_actions(run_dirs, epochs, out=None) -> list[dict]:
    """Project executed actions of several runs into a shared 2-d PCA basis.

    For each requested epoch the basis is fit on the union of all runs'
    actions at that epoch, so projection areas are directly comparable.
    Writes per-run projection CSVs and a summary with bounding-box areas and
    explained-variance ratios.
    """
    run_dirs = [Path(d) for d in run_dirs]
    out_dir = output_root(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_run = {d: load_run_actions(d) for d in run_dirs}
    rows = []
    for epoch in epochs:
        missing = [str(d) for d, acts in per_run.items() if epoch not in acts]
        if missing:
            available = sorted(set.intersection(
                *[set(a) for a in per_run.values()])) if per_run else []
            raise ConfigError(
                f"epoch {epoch} not logged for {', '.join(missing)}; "
                f"epochs available in all runs: {available}")
        stacked = np.concatenate([per_run[d][epoch] for d in run_dirs], axis=0)
        result = pca_top2(stacked)
        offset = 0
        for d in run_dirs:
            n = per_run[d][epoch].shape[0]
            proj = result.projected[offset:offset + n]
            offset += n
            span = proj.max(axis=0) - proj.min(axis=0)
            area = float(span[0] * span[1])
            proj_path = out_dir / f"projection_epoch{epoch}_{d.name}.csv"
            with open(proj_path, "w") as fh:
                fh.write("x,y\n")
                for x, y in proj:
                    fh.write(f"{_fmt(float(x))},{_fmt(float(y))}\n")
            rows.append({
                "epoch": epoch, "run": str(d), "n_actions": n,
                "bbox_area": area,
                "evr1": float(result.explained_variance_ratio[0]),
                "evr2": float(result.explained_variance_ratio[1]),
            })
    with open(out_dir / "action_analysis.csv", "w") as fh:
        fh.write("epoch,run,n_actions,bbox_area,evr1,evr2\n")
        for row in rows:
            fh.write(f"{row['epoch']},{row['run']},{row['n_actions']},"
                     f"{_fmt(row['bbox_area'])},{_fmt(row['evr1'])},"
                     f"{_fmt(row['evr2'])}\n")
    return rows
