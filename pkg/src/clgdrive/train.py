"""The training loop: roll out, store unlabeled, label in batches, update SAC.

Every ``label_interval`` environment steps the oldest unlabeled transitions
are labeled. Once ``warmup_steps`` have passed (actions before that are
uniform random) and enough transitions are labeled, ``updates_per_step``
gradient steps follow each environment step.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from .features import extract_features, feature_dim
from .metrics import EpisodeLog, StepRecord, compute_metrics
from .replay import LabelReport, ReplayBuffer, Transition
from .reward_stack import RewardStack
from .sac import SACAgent, TrainerConfig
from .sim.world import DrivingEnv
from .trajectory import RowWriter, apply_record, make_row

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("step", "episode", "AS", "RC", "TD", "CR", "ICT", "DCF", "TCF", "mean_reward")
# episode ends that are real terminal states; the rest are time/budget truncations
TERMINAL_REASONS = ("collision", "off_lane", "stuck", "route_completed")


@dataclass
class TrainResult:
    agent: SACAgent
    curve: List[Dict]
    episodes: List[EpisodeLog]
    losses: List[Dict[str, float]]
    steps: int
    wall_s: float
    unlabeled_evictions: int


def _step_record(res) -> StepRecord:
    info = res.info
    return StepRecord(info.time_s, info.speed * 3.6, info.distance_m, bool(res.scene.collision),
                      info.collision_speed_kmh, info.route_completions, info.lateral_offset,
                      0.0, info.route_progress_m)


class _RowFlusher:
    """Writes trajectory rows in step order as soon as their rewards are known."""

    def __init__(self, writer: Optional[RowWriter]):
        self.writer = writer
        self.pending: Dict[int, Dict] = {}
        self.next_seq = 0

    def add(self, seq: int, row: Dict) -> None:
        if self.writer is not None:
            self.pending[seq] = row

    def labeled(self, buffer: ReplayBuffer, report: LabelReport) -> None:
        if self.writer is None:
            return
        for seq in report.sequences:
            if seq in self.pending:
                apply_record(self.pending[seq], buffer.get(seq).record)
                self.pending[seq]["_done"] = True
        while self.next_seq in self.pending and self.pending[self.next_seq].get("_done"):
            row = self.pending.pop(self.next_seq)
            row.pop("_done")
            self.writer.write(row)
            self.next_seq += 1

    def finish(self) -> None:
        if self.writer is None:
            return
        for seq in sorted(self.pending):
            row = self.pending.pop(seq)
            row.pop("_done", None)
            self.writer.write(row)
        self.writer.close()


def train(env: DrivingEnv, buffer: ReplayBuffer, stack: RewardStack, cfg: TrainerConfig,
          eval_interval: int = 5000, out_dir: Optional[Path] = None, metadata: Optional[dict] = None,
          progress: Optional[Callable[[Dict], None]] = None) -> TrainResult:
    """Run ``cfg.total_steps`` environment steps and return the trained agent.

    With ``out_dir`` the run writes ``curves.csv``, ``trajectory.jsonl`` and
    ``checkpoint_<step>.vlrc`` files there plus ``checkpoint.vlrc`` at the end.
    Everything is single-threaded and reproducible from ``cfg.seed``.
    """
    rng = np.random.default_rng(cfg.seed)
    bev = cfg.bev_size
    agent = SACAgent(feature_dim(bev), 2, cfg, np.random.default_rng(cfg.seed + 1),
                     metadata=dict(metadata or {}, bev_size=bev, v_max=env.v_max))
    feats = lambda o: extract_features(o, env.v_max, bev)

    writer = curve_fh = curve_writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        writer = RowWriter(out_dir / "trajectory.jsonl")
        curve_fh = open(out_dir / "curves.csv", "w", newline="")
        curve_writer = csv.DictWriter(curve_fh, fieldnames=CURVE_COLUMNS, lineterminator="\n")
        curve_writer.writeheader()
    flusher = _RowFlusher(writer)

    episodes: List[EpisodeLog] = []
    window_start_ep = 0
    window_rewards: List[float] = []
    curve: List[Dict] = []
    losses: List[Dict[str, float]] = []

    def on_label(report: LabelReport):
        for seq in report.sequences:
            window_rewards.append(buffer.get(seq).reward)
        flusher.labeled(buffer, report)

    obs = env.reset(seed=cfg.seed)
    state = feats(obs)
    frame = f"{env.episode}:0"
    steps: List[StepRecord] = []
    t0 = time.perf_counter()
    try:
        for step in range(1, cfg.total_steps + 1):
            if step <= cfg.warmup_steps:
                action = rng.uniform(-1.0, 1.0, size=2)
            else:
                action = agent.act(state)
            res = env.step(action)
            next_state = feats(res.observation)
            done = res.terminated and res.reason in TERMINAL_REASONS
            seq = buffer.push(Transition(frame, state, np.asarray(action, dtype=np.float64), 0.0,
                                         res.info.frame_id, next_state, done, res.scene,
                                         res.info.vehicle, res.info.task_reward))
            flusher.add(seq, make_row(res, action, None, env.ego))
            steps.append(_step_record(res))

            if step % buffer.cfg.label_interval == 0:
                on_label(buffer.relabel_batch(stack))

            if step > cfg.warmup_steps and buffer.labeled_count >= cfg.batch_size:
                for _ in range(cfg.updates_per_step):
                    losses.append(agent.update(buffer.sample(cfg.batch_size, rng)))

            if res.terminated:
                episodes.append(EpisodeLog(steps, res.reason))
                steps = []
                obs = env.reset()
                frame = f"{env.episode}:0"
            else:
                obs = res.observation
                frame = res.info.frame_id
            state = feats(obs)

            if step % eval_interval == 0 or step == cfg.total_steps:
                window = episodes[window_start_ep:] or [EpisodeLog(list(steps), "none")]
                if window[0].steps:
                    row = _curve_row(step, len(episodes), window, window_rewards)
                    curve.append(row)
                    if curve_writer is not None:
                        curve_writer.writerow(row)
                        curve_fh.flush()
                    if progress is not None:
                        progress(row)
                window_start_ep = len(episodes)
                window_rewards.clear()
            if out_dir is not None and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
                agent.save(out_dir / f"checkpoint_{step}.vlrc")
        while buffer.unlabeled_count:
            rep = buffer.relabel_batch(stack)
            on_label(rep)
            if rep.labeled == 0:
                break
    finally:
        flusher.finish()
        if curve_fh is not None:
            curve_fh.close()
    if out_dir is not None:
        agent.save(out_dir / "checkpoint.vlrc")
    if buffer.unlabeled_evictions:
        log.warning("%d transitions were evicted before labeling", buffer.unlabeled_evictions)
    return TrainResult(agent, curve, episodes, losses, cfg.total_steps, time.perf_counter() - t0,
                       buffer.unlabeled_evictions)


def _curve_row(step: int, n_episodes: int, window: List[EpisodeLog], rewards: List[float]) -> Dict:
    m = compute_metrics(window, "train")
    return {"step": step, "episode": n_episodes, "AS": m.as_kmh, "RC": m.rc, "TD": m.td_m,
            "CR": m.cr_fraction, "ICT": m.ict_steps, "DCF": m.dcf_per_km, "TCF": m.tcf_per_1000steps,
            "mean_reward": float(np.mean(rewards)) if rewards else math.nan}
