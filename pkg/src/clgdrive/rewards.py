"""Per-frame semantic rewards: plain similarity, LORD, contrastive goals, baselines."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .embeddings import GoalPair, SceneDescriptor, cosine_sim

MODES = ("clg", "pos_only", "neg_only", "lord", "vlm_sr", "vlm_rm", "sparse_binary")
SCORE_MODES = ("clg", "pos_only", "neg_only", "lord")


@dataclass(frozen=True)
class ParadigmConfig:
    mode: str = "clg"
    alpha: float = 0.5
    beta: float = 0.5
    theta_min: float = -0.03
    theta_max: float = 0.0
    sr_temperature: float = 1.0
    sr_threshold: float = 0.8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown reward mode {self.mode!r}; expected one of {MODES}")
        if not self.theta_min < self.theta_max:
            raise ValueError("theta_min must be below theta_max")
        if self.mode == "clg" and abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ValueError("clg mode requires alpha + beta = 1")
        if not 0.0 < self.sr_threshold < 1.0:
            raise ValueError("sr_threshold must lie in (0, 1)")
        if self.sr_temperature <= 0.0:
            raise ValueError("sr_temperature must be positive")


@dataclass(frozen=True)
class SemanticScore:
    sim_pos: float
    sim_neg: float
    raw: float
    normalized: float


def reward_vlm(state_emb: np.ndarray, goal_emb: np.ndarray) -> float:
    return cosine_sim(state_emb, goal_emb)


def reward_lord(state_emb: np.ndarray, neg_goal_emb: np.ndarray) -> float:
    """``1 - sim(state, neg)``, in [0, 2]."""
    return 1.0 - cosine_sim(state_emb, neg_goal_emb)


def clg_contrast(sim_pos: float, sim_neg: float, alpha: float = 0.5, beta: float = 0.5) -> float:
    return alpha * sim_pos - beta * sim_neg


def reward_clg(state_emb: np.ndarray, goals: GoalPair) -> SemanticScore:
    """Contrastive score ``alpha*sim_pos - beta*sim_neg``; ``normalized`` is left NaN."""
    sp = cosine_sim(state_emb, goals.pos_embedding)
    sn = cosine_sim(state_emb, goals.neg_embedding)
    return SemanticScore(sp, sn, clg_contrast(sp, sn, goals.alpha, goals.beta), math.nan)


def normalize_clg(raw: float, cfg: ParadigmConfig) -> float:
    """Clip to ``[theta_min, theta_max]`` and rescale affinely to [0, 1]."""
    lo, hi = cfg.theta_min, cfg.theta_max
    clipped = min(max(raw, lo), hi)
    return (clipped - lo) / (hi - lo)


def reward_vlm_sr(state_emb: np.ndarray, goals: GoalPair, cfg: ParadigmConfig) -> int:
    """Binary success reward from a two-way softmax over goal similarities."""
    sp = cosine_sim(state_emb, goals.pos_embedding)
    sn = cosine_sim(state_emb, goals.neg_embedding)
    return sr_from_similarities(sp, sn, cfg)


def sr_from_similarities(sim_pos: float, sim_neg: float, cfg: ParadigmConfig) -> int:
    # softmax([a, b])[0] == sigmoid(a - b); the difference form is shift invariant
    z = (sim_pos - sim_neg) / cfg.sr_temperature
    p_pos = 1.0 / (1.0 + math.exp(-z))
    return 1 if p_pos >= cfg.sr_threshold else 0


def reward_vlm_rm(state_emb: np.ndarray, baseline_emb: np.ndarray, target_emb: np.ndarray) -> float:
    """Projection of the state onto the unit baseline-to-target direction."""
    direction = np.asarray(target_emb, dtype=np.float64) - baseline_emb
    n = float(np.linalg.norm(direction))
    if n == 0.0:
        raise ValueError("baseline and target embeddings coincide; projection direction undefined")
    if state_emb.shape != direction.shape:
        raise ValueError(
            f"embedding dimensions differ: {state_emb.shape[-1]} vs {direction.shape[-1]}")
    return float(np.dot(state_emb, direction / n))


def reward_sparse_binary(scene: SceneDescriptor) -> float:
    return -1.0 if scene.collision else 0.0


def semantic_score(state_emb: np.ndarray, goals: Optional[GoalPair], cfg: ParadigmConfig) -> SemanticScore:
    """Raw score for the configured mode plus its normalized value.

    ``lord`` feeds ``-sim_neg`` (the negative-goal distance, shifted by -1) into the shared
    normalizer so every mode uses one pipeline.
    """
    if cfg.mode not in SCORE_MODES:
        raise ValueError(f"mode {cfg.mode!r} has no semantic score; use its reward function")
    if goals is None:
        raise ValueError(f"mode {cfg.mode!r} requires goal embeddings")
    sp = cosine_sim(state_emb, goals.pos_embedding) if cfg.mode in ("clg", "pos_only") else math.nan
    sn = cosine_sim(state_emb, goals.neg_embedding) if cfg.mode != "pos_only" else math.nan
    if cfg.mode == "clg":
        raw = clg_contrast(sp, sn, cfg.alpha, cfg.beta)
    elif cfg.mode == "pos_only":
        raw = sp
    elif cfg.mode == "neg_only":
        raw = -sn
    else:
        raw = (1.0 - sn) - 1.0
    return SemanticScore(sp, sn, raw, normalize_clg(raw, cfg))
