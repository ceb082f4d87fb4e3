"""Command-line entry point: ``admpo <command> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from . import config as cfg
from .data import read_dataset
from .datasets import BehaviorSpec, batch_behavior_policy, gen_dataset, load_behavior_agent
from .envs import ENVS, make_env
from .evalkit import compounding_error, m_sweep, uncertainty_scatter, write_sweep_csv
from .exceptions import ConfigurationError, TrainingError, UsageError
from .loops import ModelConfig, OfflineLoopConfig, run_offline, run_online, write_metrics
from .models import AnyStepDynamicsModel

MANIFEST_VERSION = 1
COMMANDS = ("train-online", "train-offline", "gen-dataset", "eval-model", "eval-uncertainty", "m-sweep")
log = logging.getLogger("admpo")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(_fail(2, f"{self.prog}: error: {message}"))


def _fail(code: int, message: str) -> int:
    print(message, file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="admpo", description="Any-step dynamics model policy optimization on toy environments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", help="INI file overriding the shipped defaults")
        c.add_argument("--seed", type=int, default=0)
        c.add_argument("--out", required=True, help="run directory")
        c.add_argument("--env", choices=sorted(ENVS))
        if name in ("train-online", "train-offline", "eval-model", "eval-uncertainty"):
            c.add_argument("--m", type=int)
        if name in ("train-offline", "m-sweep"):
            c.add_argument("--beta", type=float)
        if name in ("train-online", "train-offline", "eval-model", "eval-uncertainty", "m-sweep"):
            c.add_argument("--horizon", type=int)
        if name in ("train-offline", "eval-model", "eval-uncertainty", "m-sweep"):
            c.add_argument("--dataset", help="dataset file written by gen-dataset")
        if name in ("eval-model", "eval-uncertainty"):
            c.add_argument("--model", help="saved any-step model (skips training)")
        if name == "eval-uncertainty":
            c.add_argument("--checkpoint", help="learned agent checkpoint")
        if name == "gen-dataset":
            c.add_argument("--behavior", help="random | checkpoint:PATH[:SIGMA] | JSON spec")
            c.add_argument("--episodes", type=int)
        if name == "m-sweep":
            c.add_argument("--m-values", help="comma-separated m values")
    return p


def _overrides(args) -> dict:
    out = {}
    cmd = args.command
    m = getattr(args, "m", None)
    if m is not None:
        out["online.m" if cmd == "train-online" else "offline.m"] = m
    if getattr(args, "beta", None) is not None:
        out["offline.beta"] = args.beta
    h = getattr(args, "horizon", None)
    if h is not None:
        if cmd == "train-online":
            out["online.schedule"] = (h, h, 0, 1)
        elif cmd in ("train-offline", "m-sweep"):
            out["offline.horizon"] = h
        else:
            out["eval.horizon"] = h
    if getattr(args, "dataset", None):
        out["offline.dataset"] = args.dataset
    if getattr(args, "behavior", None):
        out["dataset.behavior"] = args.behavior
    if getattr(args, "episodes", None) is not None:
        out["dataset.episodes"] = args.episodes
    if getattr(args, "m_values", None):
        out["eval.m_values"] = args.m_values
    if getattr(args, "checkpoint", None):
        out["eval.learned_checkpoint"] = args.checkpoint
    return out


def _dataset(resolved):
    path = resolved["offline"]["dataset"]
    if not path:
        raise ConfigurationError("this command needs --dataset", key="dataset")
    if not os.path.exists(path):
        raise ConfigurationError(f"dataset {path} not found", key="dataset")
    return read_dataset(path)


def _model_config(resolved) -> ModelConfig:
    return cfg.build(resolved, "model")


def _adm(resolved, args, data, m, seed):
    if getattr(args, "model", None):
        model = AnyStepDynamicsModel.load(args.model)
        if model.m != m:
            log.info("using saved model with m=%d", model.m)
        return model
    return _model_config(resolved).build(m, seed=[seed, 5]).fit(data)


def _cmd_train_online(args, resolved, out) -> dict:
    loop = cfg.build(resolved, "online")
    res = run_online(loop, _model_config(resolved), cfg.build(resolved, "sac"), seed=args.seed)
    write_metrics(os.path.join(out, "metrics.jsonl"), res.metrics)
    res.agent.save(os.path.join(out, "agent.admp"))
    arts = {"metrics": "metrics.jsonl", "agent": "agent.admp"}
    if res.model is not None:
        res.model.save(os.path.join(out, "model.admp"))
        arts["model"] = "model.admp"
    return arts


def _cmd_train_offline(args, resolved, out) -> dict:
    loop: OfflineLoopConfig = cfg.build(resolved, "offline")
    data, manifest = _dataset(resolved)
    res = run_offline(loop, _model_config(resolved), cfg.build(resolved, "sac"), seed=args.seed, dataset=data,
                      env_name=manifest.get("env", resolved["run"]["env"]))
    write_metrics(os.path.join(out, "metrics.jsonl"), res.metrics)
    res.agent.save(os.path.join(out, "agent.admp"))
    res.model.save(os.path.join(out, "model.admp"))
    return {"metrics": "metrics.jsonl", "agent": "agent.admp", "model": "model.admp"}


def _cmd_gen_dataset(args, resolved, out) -> dict:
    d = resolved["dataset"]
    path = os.path.join(out, "dataset.admd")
    manifest = gen_dataset(resolved["run"]["env"], d["behavior"], d["episodes"], args.seed, path)
    with open(os.path.join(out, "dataset_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return {"dataset": "dataset.admd", "dataset_manifest": "dataset_manifest.json"}


def _cmd_eval_model(args, resolved, out) -> dict:
    data, _ = _dataset(resolved)
    m = resolved["offline"]["m"]
    ev = resolved["eval"]
    model = _adm(resolved, args, data, m, args.seed)
    curve = compounding_error(model, data, ev["horizon"], ev["starts"], seed=args.seed, m=model.m, model_id="adm")
    curve.to_csv(os.path.join(out, "curve_adm.csv"))
    base = _model_config(resolved).build_ensemble([args.seed, 6]).fit(data)
    bcurve = compounding_error(base, data, ev["horizon"], ev["starts"], seed=args.seed, m=model.m,
                               model_id="ensemble")
    bcurve.to_csv(os.path.join(out, "curve_ensemble.csv"))
    return {"curve_adm": "curve_adm.csv", "curve_ensemble": "curve_ensemble.csv"}


def _cmd_eval_uncertainty(args, resolved, out) -> dict:
    data, manifest = _dataset(resolved)
    ev = resolved["eval"]
    if not ev["learned_checkpoint"]:
        raise ConfigurationError("eval-uncertainty needs --checkpoint (learned agent)", key="checkpoint")
    env = make_env(manifest.get("env", resolved["run"]["env"]))
    learned = load_behavior_agent(ev["learned_checkpoint"], env)
    if "behavior" not in manifest:
        raise ConfigurationError("dataset manifest does not name its behavior policy", key="dataset")
    base_dir = os.path.dirname(os.path.abspath(resolved["offline"]["dataset"]))
    behavior = batch_behavior_policy(BehaviorSpec.from_any(manifest["behavior"]), env, base_dir)
    ad_ = env.spec.action_dim
    policies = {
        "random": lambda s, rngs: np.stack([g.uniform(-1.0, 1.0, size=ad_) for g in rngs]),
        "learned": learned.policy("sample"),
        "behavior": behavior,
    }
    model = _adm(resolved, args, data, resolved["offline"]["m"], args.seed)
    sc = uncertainty_scatter(model, data, env, policies, ev["points"], horizon=ev["scatter_horizon"], seed=args.seed)
    sc.to_csv(os.path.join(out, "scatter.csv"))
    summary = {"r": sc.r, "degenerate": sc.degenerate,
               "mean_u": {t: sc.mean_u(t) for t in sorted(policies)}}
    with open(os.path.join(out, "scatter_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return {"scatter": "scatter.csv", "scatter_summary": "scatter_summary.json"}


def _cmd_m_sweep(args, resolved, out) -> dict:
    data, manifest = _dataset(resolved)
    ev = resolved["eval"]
    base = dict(resolved["offline"])
    mc, sc = _model_config(resolved), cfg.build(resolved, "sac")

    def run(m, seed):
        loop = OfflineLoopConfig(**{**base, "m": m})
        res = run_offline(loop, mc, sc, seed=seed, dataset=data, env_name=manifest.get("env"))
        return res.metrics[-1]["mean_return"]

    rows = m_sweep(run, ev["m_values"], seeds=ev["seeds"])
    write_sweep_csv(os.path.join(out, "sweep.csv"), rows)
    return {"sweep": "sweep.csv"}


HANDLERS = {
    "train-online": _cmd_train_online,
    "train-offline": _cmd_train_offline,
    "gen-dataset": _cmd_gen_dataset,
    "eval-model": _cmd_eval_model,
    "eval-uncertainty": _cmd_eval_uncertainty,
    "m-sweep": _cmd_m_sweep,
}


def _setup_logging() -> None:
    level = os.environ.get("ADMPO_LOG_LEVEL", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigurationError(f"ADMPO_LOG_LEVEL must be one of {sorted(levels)}", key="ADMPO_LOG_LEVEL")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    started = time.time()
    try:
        _setup_logging()
        env = args.env or cfg.file_env(args.config) or "pendulum"
        resolved = cfg.resolve(env, args.config, _overrides(args))
        os.makedirs(args.out, exist_ok=True)
        artifacts = HANDLERS[args.command](args, resolved, args.out)
    except ConfigurationError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        return _fail(2, f"config error{key}: {exc}")
    except UsageError as exc:
        return _fail(2, f"usage error: {exc}")
    except (TrainingError, OSError, ValueError, RuntimeError) as exc:
        return _fail(1, f"error: {exc}")
    manifest = {
        "format_version": MANIFEST_VERSION,
        "command": args.command,
        "seed": args.seed,
        "config": cfg.to_jsonable(resolved),
        "artifacts": artifacts,
        "started": started,
        "finished": time.time(),
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return 0


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
