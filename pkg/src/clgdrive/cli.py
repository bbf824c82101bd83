"""Command-line entry point: ``clgdrive train | evaluate | rollout | label | plot``.

Exit codes: 0 success, 2 configuration error, 3 data or file error,
4 runtime failure.
"""
from __future__ import annotations

import functools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import click

from . import config as cfgmod
from .embeddings import EmbeddingLookupError, StoreFormatError
from .sim.roadgraph import MapFormatError, PlanningError

EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 2, 3, 4

log = logging.getLogger("clgdrive")


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.exceptions.ClickException:
            raise
        except cfgmod.ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (cfgmod.DataFileError, FileNotFoundError, StoreFormatError, EmbeddingLookupError,
                MapFormatError, PlanningError, json.JSONDecodeError) as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except ValueError as exc:
            # malformed logs and checkpoints surface as ValueError subclasses
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except Exception as exc:  # noqa: BLE001 - last-resort classification
            click.echo(f"runtime failure: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)
    return wrapper


def _load_config(path: Optional[str]) -> cfgmod.RunConfig:
    return cfgmod.load(path) if path else cfgmod.RunConfig()


def _graph(cfg: cfgmod.RunConfig):
    from .sim.roadgraph import load_map
    return load_map(cfg.resolve(cfg.simulator.map) if cfg.simulator.map else None)


def _routes(cfg: cfgmod.RunConfig):
    from .metrics import load_routes
    return load_routes(cfg.resolve(cfg.eval.routes) if cfg.eval.routes else None)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Train and evaluate driving policies with contrastive language-goal rewards."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Run configuration (TOML).")
@click.option("--seed", type=int, default=None, help="Overrides the trainer and simulator seeds.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Output directory.")
@click.option("--steps", type=int, default=None, help="Overrides trainer.total_steps.")
@_guarded
def train(config_path, seed, out_dir, steps):
    """Run the training loop; writes checkpoints, curves.csv and trajectory.jsonl."""
    from .replay import ReplayBuffer
    from .sim.world import DrivingEnv
    from .train import train as run_train

    cfg = _load_config(config_path)
    if seed is not None:
        cfg = replace(cfg, trainer=replace(cfg.trainer, seed=seed),
                      simulator=replace(cfg.simulator, seed=seed))
    if steps is not None:
        if steps < 1:
            raise cfgmod.ConfigError("--steps must be positive")
        cfg = replace(cfg, trainer=replace(cfg.trainer, total_steps=steps))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.save(cfg, out / "config.toml")
    env = DrivingEnv(_graph(cfg), cfg.simulator.scenario(), cfg.reward.v_max,
                     render=cfg.trainer.bev_size > 0)
    result = run_train(env, ReplayBuffer(cfg.buffer), cfg.make_stack(), cfg.trainer,
                       eval_interval=cfg.eval.interval, out_dir=out,
                       metadata={"reward_mode": cfg.reward.mode},
                       progress=lambda row: log.info("step %d: %s", row["step"], row))
    click.echo(f"trained {result.steps} steps in {result.wall_s:.1f} s; outputs in {out}")


def _eval_env_factory(cfg, bev_size: int, n_traffic: Optional[int] = None):
    from .sim.world import DrivingEnv
    graph = _graph(cfg)
    scenario = cfg.simulator.scenario()
    if n_traffic is not None:
        scenario = replace(scenario, n_traffic=n_traffic)
    return lambda: DrivingEnv(graph, scenario, cfg.reward.v_max, regenerate_routes=False,
                              max_steps=cfg.eval.max_steps, render=bev_size > 0)


@main.command()
@click.option("--checkpoint", type=click.Path(dir_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Metrics JSON path.")
@_guarded
def evaluate(checkpoint, config_path, out):
    """Deterministic rollouts over the test routes; writes metrics JSON and per-route logs."""
    from .features import extract_features
    from .metrics import evaluate_policy
    from .sac import SACAgent
    from .trajectory import write_rows

    cfg = _load_config(config_path)
    if not Path(checkpoint).is_file():
        raise cfgmod.DataFileError(f"checkpoint {checkpoint} does not exist")
    agent = SACAgent.load(checkpoint)
    bev = int(agent.metadata.get("bev_size", cfg.trainer.bev_size))
    report, logs, rows = evaluate_policy(
        lambda f: agent.act(f, deterministic=True),
        lambda o: extract_features(o, cfg.reward.v_max, bev),
        _eval_env_factory(cfg, bev), _routes(cfg), seed=cfg.eval.seed,
        stack=cfg.make_stack(), gamma=cfg.trainer.gamma)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc["discounted_returns"] = [l.discounted_return for l in logs]
    out.write_text(json.dumps(doc, indent=2) + "\n")
    write_rows(out.with_name(out.stem + "_episodes.jsonl"), [r for ep in rows for r in ep])
    click.echo(f"SR={report.sr_fraction:.2f} RC={report.rc:.2f} CR={report.cr_fraction:.2f} -> {out}")


@main.command()
@click.option("--policy", "policy_spec", required=True,
              help="random | scripted:approach-and-stop | scripted:side-pass | checkpoint:<path>")
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Trajectory JSONL path.")
@click.option("--episodes", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--label/--no-label", default=True, show_default=True,
              help="Fill reward columns with the configured reward stack.")
@_guarded
def rollout(policy_spec, config_path, out, episodes, seed, label):
    """Record a trajectory log. Scripted scenarios run without background traffic."""
    from .policies import CheckpointPolicy, make_policy, rollout as run_rollout
    from .trajectory import write_rows

    cfg = _load_config(config_path)
    if policy_spec.startswith("checkpoint:") and not Path(policy_spec[11:]).is_file():
        raise cfgmod.DataFileError(f"checkpoint {policy_spec[11:]} does not exist")
    try:
        policy = make_policy(policy_spec, seed)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--policy")
    scripted = policy_spec.startswith("scripted:")
    bev = policy.bev_size if isinstance(policy, CheckpointPolicy) else 0
    env = _eval_env_factory(cfg, bev, 0 if scripted else None)()
    rows = run_rollout(env, policy, episodes, seed, cfg.make_stack() if label else None)
    write_rows(out, rows)
    click.echo(f"wrote {len(rows)} steps to {out}")


@main.command()
@click.option("--log", "log_path", type=click.Path(dir_okay=False), required=True)
@click.option("--provider", default=None, help='"synthetic" or "store:<path>" (default: from config).')
@click.option("--paradigm", default=None, help="Reward mode (default: from config).")
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guarded
def label(log_path, provider, paradigm, config_path, out):
    """Recompute the reward columns of a trajectory log offline."""
    from .trajectory import label_rows, read_rows, write_rows

    cfg = _load_config(config_path)
    doc = cfg.to_dict()
    if provider is not None:
        doc["provider"] = provider
    if paradigm is not None:
        doc["reward"]["mode"] = paradigm
    cfg = cfgmod.from_dict(doc, cfg.base_dir or Path.cwd())
    cfgmod.check_referenced_files(cfg)
    if not Path(log_path).is_file():
        raise cfgmod.DataFileError(f"log {log_path} does not exist")
    rows = label_rows(read_rows(log_path), cfg.make_stack())
    write_rows(out, rows)
    click.echo(f"labeled {len(rows)} steps with {cfg.reward.mode} -> {out}")


@main.command()
@click.option("--input", "input_path", type=click.Path(dir_okay=False), required=True,
              help="curves.csv or a labeled trajectory JSONL.")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@_guarded
def plot(input_path, out_dir):
    """Write SVG line charts."""
    from .plotting import plot_curves, plot_trace

    if not Path(input_path).is_file():
        raise cfgmod.DataFileError(f"{input_path} does not exist")
    paths = plot_curves(input_path, out_dir) if input_path.endswith(".csv") else plot_trace(input_path, out_dir)
    click.echo(f"wrote {len(paths)} SVG file(s) to {out_dir}")


if __name__ == "__main__":
    main()
