"""Replay buffer with deferred, batched reward labeling.

Transitions enter unlabeled with reward 0. A labeling pass takes the oldest
unlabeled transitions, computes their rewards with a :class:`RewardStack`,
and writes reward and flag together under the buffer lock, so a concurrent
sampler never sees a half-labeled record. Sampling only ever draws labeled
transitions. Each transition is labeled at most once.
"""
from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .embeddings import EmbeddingLookupError, SceneDescriptor
from .reward_stack import RewardRecord, RewardStack
from .synthesis import VehicleStateSnapshot


class InsufficientDataError(RuntimeError):
    pass


@dataclass(frozen=True)
class BufferConfig:
    capacity: int = 100_000
    label_interval: int = 256
    label_batch: int = 1024

    def __post_init__(self):
        if min(self.capacity, self.label_interval, self.label_batch) < 1:
            raise ValueError("capacity, label_interval and label_batch must be positive")
        if self.label_batch > self.capacity:
            raise ValueError("label_batch cannot exceed capacity")


@dataclass
class Transition:
    obs_key: str
    state_features: np.ndarray
    action: np.ndarray
    reward: float
    next_obs_key: str
    next_state_features: np.ndarray
    done: bool
    scene: SceneDescriptor
    vehicle: VehicleStateSnapshot
    task_reward: float = 0.0
    labeled: bool = False
    record: Optional[RewardRecord] = None
    seq: int = -1


@dataclass
class LabelReport:
    labeled: int = 0
    skipped: List[str] = field(default_factory=list)
    sequences: List[int] = field(default_factory=list)


class ReplayBuffer:
    def __init__(self, cfg: BufferConfig = BufferConfig()):
        self.cfg = cfg
        self._slots: List[Optional[Transition]] = [None] * cfg.capacity
        self._labeled = np.zeros(cfg.capacity, dtype=bool)
        self._pushed = 0
        self._unlabeled: deque = deque()
        self._skipped: List[int] = []
        self._lock = threading.Lock()
        self.unlabeled_evictions = 0

    def __len__(self) -> int:
        return min(self._pushed, self.cfg.capacity)

    @property
    def total_pushed(self) -> int:
        return self._pushed

    @property
    def labeled_count(self) -> int:
        return int(self._labeled.sum())

    @property
    def unlabeled_count(self) -> int:
        return len(self) - self.labeled_count

    def push(self, t: Transition) -> int:
        """Store ``t`` with reward reset to 0 and return its sequence number."""
        t = replace(t, reward=0.0, labeled=False, record=None)
        with self._lock:
            seq = self._pushed
            slot = seq % self.cfg.capacity
            old = self._slots[slot]
            if old is not None and not old.labeled:
                self.unlabeled_evictions += 1
            t.seq = seq
            self._slots[slot] = t
            self._labeled[slot] = False
            self._unlabeled.append(seq)
            self._pushed += 1
        return seq

    def get(self, seq: int) -> Transition:
        if not self._alive(seq):
            raise KeyError(f"transition {seq} is not in the buffer")
        return self._slots[seq % self.cfg.capacity]

    def _alive(self, seq: int) -> bool:
        return self._pushed - self.cfg.capacity <= seq < self._pushed

    def _take_unlabeled(self, n: int) -> List[Transition]:
        out = []
        with self._lock:
            while self._unlabeled and len(out) < n:
                seq = self._unlabeled.popleft()
                if self._alive(seq):
                    out.append(self._slots[seq % self.cfg.capacity])
        return out

    def relabel_batch(self, stack: RewardStack, limit: Optional[int] = None) -> LabelReport:
        """Label up to ``label_batch`` (or ``limit``) of the oldest unlabeled transitions.

        A transition whose embedding cannot be found is left unlabeled, listed
        in the report, and parked until :meth:`requeue_skipped`.
        """
        report = LabelReport()
        for t in self._take_unlabeled(self.cfg.label_batch if limit is None else limit):
            try:
                rec = stack.label(t.next_obs_key, t.scene, t.vehicle, t.task_reward)
            except EmbeddingLookupError:
                report.skipped.append(t.next_obs_key)
                with self._lock:
                    self._skipped.append(t.seq)
                continue
            with self._lock:
                if not self._alive(t.seq) or self._slots[t.seq % self.cfg.capacity] is not t:
                    continue
                t.reward = rec.reward
                t.record = rec
                t.labeled = True
                self._labeled[t.seq % self.cfg.capacity] = True
            report.labeled += 1
            report.sequences.append(t.seq)
        return report

    def requeue_skipped(self) -> int:
        with self._lock:
            alive = [s for s in self._skipped if self._alive(s)]
            self._unlabeled.extendleft(reversed(alive))
            self._skipped = []
        return len(alive)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        """Uniform batch over labeled transitions, as stacked arrays."""
        with self._lock:
            idx = np.flatnonzero(self._labeled)
            if len(idx) == 0:
                raise InsufficientDataError("no labeled transitions")
            if batch_size > len(idx):
                raise InsufficientDataError(f"batch_size {batch_size} exceeds the {len(idx)} labeled transitions")
            pick = idx[rng.integers(0, len(idx), size=batch_size)]
            items = [self._slots[i] for i in pick]
        assert all(t.labeled for t in items), "sampled an unlabeled transition"
        return {
            "obs": np.stack([t.state_features for t in items]),
            "action": np.stack([t.action for t in items]),
            "reward": np.array([t.reward for t in items]),
            "next_obs": np.stack([t.next_state_features for t in items]),
            "done": np.array([float(t.done) for t in items]),
        }

    def transitions(self) -> List[Transition]:
        """Live transitions, oldest first."""
        with self._lock:
            start = max(0, self._pushed - self.cfg.capacity)
            return [self._slots[s % self.cfg.capacity] for s in range(start, self._pushed)]


class LabelingWorker(threading.Thread):
    """Background labeler: runs a pass whenever :meth:`notify` is called.

    ``on_report`` receives every :class:`LabelReport` from the worker thread.
    """

    def __init__(self, buffer: ReplayBuffer, stack: RewardStack,
                 on_report: Optional[Callable[[LabelReport], None]] = None):
        super().__init__(daemon=True)
        self.buffer, self.stack, self.on_report = buffer, stack, on_report
        self._wake = threading.Event()
        self._halt = threading.Event()
        self.error: Optional[BaseException] = None

    def notify(self) -> None:
        self._wake.set()

    def stop(self, drain: bool = True) -> None:
        self._halt.set()
        self._wake.set()
        self.join()
        if drain:
            while self.buffer.unlabeled_count:
                rep = self.buffer.relabel_batch(self.stack)
                if self.on_report:
                    self.on_report(rep)
                if rep.labeled == 0:
                    break

    def run(self) -> None:
        try:
            while not self._halt.is_set():
                self._wake.wait()
                self._wake.clear()
                if self._halt.is_set():
                    break
                rep = self.buffer.relabel_batch(self.stack)
                if self.on_report:
                    self.on_report(rep)
        except BaseException as exc:  # surfaced to the owner via .error
            self.error = exc
