"""One callable that turns a recorded frame into the training reward.

Both the immediate (per-step) path and the deferred replay-labeling path call
:meth:`RewardStack.label`, which is what makes the two bit-identical.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .embeddings import NEG_GOAL, POS_GOAL, GoalPair, SceneDescriptor
from .rewards import (
    SCORE_MODES,
    ParadigmConfig,
    SemanticScore,
    normalize_clg,
    reward_lord,
    reward_sparse_binary,
    reward_vlm,
    reward_vlm_rm,
    semantic_score,
    sr_from_similarities,
)
from .synthesis import SynthesisConfig, VehicleStateSnapshot, final_reward, synthesize

VLM_RM_BASELINE = "a car"
VLM_RM_TARGET = "a car is driving safely"


@dataclass(frozen=True)
class RewardRecord:
    sim_pos: float
    sim_neg: float
    raw: float
    normalized: float
    r_speed: float
    f_center: float
    f_angle: float
    f_stability: float
    r_synthesis: float
    v_target: float
    r_task: float
    reward: float

    def as_dict(self) -> dict:
        return asdict(self)


_NAN = math.nan


class RewardStack:
    """Provider + goals + paradigm + synthesis settings, applied per frame.

    With ``synthesis=True`` the score modes (clg, pos_only, neg_only, lord)
    drive the target speed of the multiplicative synthesis reward. With
    ``synthesis=False`` each mode's own per-frame signal is added to the task
    reward, which gives the plain-similarity baselines (pos_only without
    synthesis is the dense per-frame similarity reward). ``sparse_binary``
    ignores the task reward entirely.
    """

    def __init__(self, provider, paradigm: ParadigmConfig = ParadigmConfig(),
                 synthesis_cfg: SynthesisConfig = SynthesisConfig(), synthesis: bool = True,
                 pos_text: str = POS_GOAL, neg_text: str = NEG_GOAL,
                 baseline_text: str = VLM_RM_BASELINE, target_text: str = VLM_RM_TARGET):
        self.provider = provider
        self.paradigm = paradigm
        self.synthesis_cfg = synthesis_cfg
        self.synthesis = synthesis and paradigm.mode in SCORE_MODES
        self.goals: Optional[GoalPair] = None
        self.rm_baseline = self.rm_target = None
        if paradigm.mode != "sparse_binary":
            # goal embeddings are computed once and reused for the whole run
            alpha, beta = (paradigm.alpha, paradigm.beta) if paradigm.mode == "clg" else (0.5, 0.5)
            self.goals = GoalPair.from_provider(provider, pos_text, neg_text, alpha, beta)
        if paradigm.mode == "vlm_rm":
            self.rm_baseline = provider.embed_goal(baseline_text)
            self.rm_target = provider.embed_goal(target_text)

    @property
    def needs_embedding(self) -> bool:
        return self.paradigm.mode != "sparse_binary"

    def label(self, frame_id, scene: SceneDescriptor, vehicle: VehicleStateSnapshot,
              r_task: float = 0.0, embedding: Optional[np.ndarray] = None) -> RewardRecord:
        mode = self.paradigm.mode
        rho = self.synthesis_cfg.rho
        if mode == "sparse_binary":
            r = reward_sparse_binary(scene)
            return RewardRecord(_NAN, _NAN, r, _NAN, _NAN, _NAN, _NAN, _NAN, _NAN, _NAN, r_task, r)
        v = self.provider.embed_frame(frame_id, scene) if embedding is None else embedding
        goals = self.goals
        if mode in SCORE_MODES:
            score = semantic_score(v, goals, self.paradigm)
            if self.synthesis:
                bd = synthesize(score, vehicle, self.synthesis_cfg)
                return RewardRecord(score.sim_pos, score.sim_neg, score.raw, score.normalized,
                                    bd.r_speed, bd.f_center, bd.f_angle, bd.f_stability,
                                    bd.r_synthesis, bd.v_target, r_task,
                                    final_reward(r_task, bd.r_synthesis, rho))
            if mode == "pos_only":
                signal = reward_vlm(v, goals.pos_embedding)
            elif mode == "lord":
                signal = reward_lord(v, goals.neg_embedding)
            else:
                signal = score.normalized
            return RewardRecord(score.sim_pos, score.sim_neg, score.raw, score.normalized,
                                _NAN, _NAN, _NAN, _NAN, _NAN, _NAN, r_task,
                                final_reward(r_task, signal, rho))
        sp = reward_vlm(v, goals.pos_embedding)
        sn = reward_vlm(v, goals.neg_embedding)
        if mode == "vlm_sr":
            signal = float(sr_from_similarities(sp, sn, self.paradigm))
        else:
            signal = reward_vlm_rm(v, self.rm_baseline, self.rm_target)
        return RewardRecord(sp, sn, signal, _NAN, _NAN, _NAN, _NAN, _NAN, _NAN, _NAN, r_task,
                            final_reward(r_task, signal, rho))

    def contrast(self, embedding: np.ndarray) -> SemanticScore:
        """Contrastive score of an embedding regardless of the configured mode."""
        sp = reward_vlm(embedding, self.goals.pos_embedding)
        sn = reward_vlm(embedding, self.goals.neg_embedding)
        raw = self.goals.alpha * sp - self.goals.beta * sn
        return SemanticScore(sp, sn, raw, normalize_clg(raw, self.paradigm))
