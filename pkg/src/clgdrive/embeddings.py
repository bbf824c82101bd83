"""Shared latent space: unit-norm embeddings, providers, and the binary store.

Embeddings are plain read-only ``float64`` numpy vectors of unit norm. Two
providers produce them:

- :class:`SyntheticProvider` derives frame embeddings deterministically from
  ground-truth :class:`SceneDescriptor` facts, with the two default goal texts
  pinned to orthonormal anchors so similarities are analytically predictable.
- :class:`StoreProvider` serves precomputed vectors (e.g. real CLIP outputs)
  from a ``VLME`` binary file written by :func:`store_write`.
"""
from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Union

import numpy as np

POS_GOAL = "the road is clear with no car accidents"
NEG_GOAL = "two cars have collided with each other on the road"

NORM_TOL = 1e-6
HAZARD_GAP_M = 10.0

STORE_MAGIC = b"VLME"
STORE_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


class DimensionMismatchError(ValueError):
    pass


class EmbeddingLookupError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class StoreFormatError(ValueError):
    """Raised for malformed embedding store files; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def make_embedding(values: Iterable[float], normalize: bool = True) -> np.ndarray:
    """Build a read-only unit-norm embedding from raw values."""
    v = np.array(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("embedding must have at least one component")
    n = float(np.linalg.norm(v))
    if normalize:
        if n == 0.0 or not math.isfinite(n):
            raise ValueError("cannot normalize a zero or non-finite vector")
        v = v / n
    elif abs(n - 1.0) > NORM_TOL:
        raise ValueError(f"embedding norm {n} is not 1 within {NORM_TOL}")
    v.setflags(write=False)
    return v


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity ``a.b / (|a| |b|)``, symmetric in its arguments."""
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"embedding dimensions differ: {a.shape[-1]} vs {b.shape[-1]}"
        )
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def scene_hazard(collision: bool, gap: float, off_road: bool) -> float:
    if collision:
        return 1.0
    gap_risk = min(max(1.0 - gap / HAZARD_GAP_M, 0.0), 1.0)
    return max(gap_risk, 0.5 if off_road else 0.0)


@dataclass(frozen=True)
class SceneDescriptor:
    """Ground-truth per-step scene facts standing in for camera content.

    ``nearest_vehicle_gap`` is bumper-to-bumper distance (m) to the closest
    vehicle ahead on the route, ``inf`` if none is in range.
    """

    collision: bool = False
    nearest_vehicle_gap: float = math.inf
    lateral_offset: float = 0.0
    off_road: bool = False

    @property
    def hazard(self) -> float:
        return scene_hazard(self.collision, self.nearest_vehicle_gap, self.off_road)


@dataclass(frozen=True)
class GoalPair:
    """Contrasting language goals with embeddings fixed at construction."""

    pos_text: str
    neg_text: str
    pos_embedding: np.ndarray = field(repr=False)
    neg_embedding: np.ndarray = field(repr=False)
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0 and 0.0 < self.beta < 1.0):
            raise ValueError("alpha and beta must lie in (0, 1)")
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ValueError(f"alpha + beta must equal 1, got {self.alpha + self.beta}")
        if self.pos_embedding.shape != self.neg_embedding.shape:
            raise DimensionMismatchError(
                f"goal dimensions differ: {self.pos_embedding.shape[-1]} vs "
                f"{self.neg_embedding.shape[-1]}"
            )

    @classmethod
    def from_provider(cls, provider, pos_text: str = POS_GOAL, neg_text: str = NEG_GOAL,
                      alpha: float = 0.5, beta: float = 0.5) -> "GoalPair":
        return cls(pos_text, neg_text, embed_goal(provider, pos_text),
                   embed_goal(provider, neg_text), alpha, beta)


def embed_goal(provider, text: str) -> np.ndarray:
    return provider.embed_goal(text)


def _hash_seed(*parts) -> int:
    h = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class SyntheticProvider:
    """Deterministic stand-in for the vision and language encoders.

    The default positive/negative goal texts map to the first two basis
    vectors. Frame embeddings mix the two anchors by scene hazard plus a small
    hash-seeded component orthogonal to both.
    """

    def __init__(self, dim: int = 32, epsilon: float = 0.05, seed_salt: int = 0,
                 pos_text: str = POS_GOAL, neg_text: str = NEG_GOAL):
        if dim < 3:
            raise ValueError("synthetic provider needs dim >= 3")
        self.dim = int(dim)
        self.epsilon = float(epsilon)
        self.seed_salt = int(seed_salt)
        self._anchor_texts = {pos_text: 0, neg_text: 1}

    def anchor(self, index: int) -> np.ndarray:
        v = np.zeros(self.dim)
        v[index] = 1.0
        v.setflags(write=False)
        return v

    @property
    def e_pos(self) -> np.ndarray:
        return self.anchor(0)

    @property
    def e_neg(self) -> np.ndarray:
        return self.anchor(1)

    def embed_goal(self, text: str) -> np.ndarray:
        if text in self._anchor_texts:
            return self.anchor(self._anchor_texts[text])
        rng = np.random.default_rng(_hash_seed("text", text, self.dim))
        return make_embedding(rng.standard_normal(self.dim))

    def embed_scene(self, scene: SceneDescriptor, seed_salt: Optional[int] = None) -> np.ndarray:
        return synthetic_embed(scene, self.seed_salt if seed_salt is None else seed_salt,
                               dim=self.dim, epsilon=self.epsilon)

    def embed_frame(self, frame_id, scene: SceneDescriptor) -> np.ndarray:
        return self.embed_scene(scene)


def synthetic_embed(scene: SceneDescriptor, seed_salt: int, dim: int = 32,
                    epsilon: float = 0.05) -> np.ndarray:
    """``normalize((1-h) e_pos + h e_neg + eps * noise)`` for hazard ``h``.

    The noise direction is a unit vector supported on components 2.. so it is
    exactly orthogonal to both anchors; the norm is taken analytically, which
    keeps the anchor components a function of hazard alone.
    """
    hazard = scene.hazard
    c_pos, c_neg = 1.0 - hazard, hazard
    v = np.zeros(dim)
    v[0], v[1] = c_pos, c_neg
    if epsilon != 0.0:
        rng = np.random.default_rng(_hash_seed(
            "scene", bool(scene.collision), float(scene.nearest_vehicle_gap),
            float(scene.lateral_offset), bool(scene.off_road), int(seed_salt)))
        h = rng.standard_normal(dim - 2)
        v[2:] = epsilon * (h / np.linalg.norm(h))
    v /= math.sqrt(c_pos * c_pos + c_neg * c_neg + epsilon * epsilon)
    v.setflags(write=False)
    return v


class StoreProvider:
    """Read-only provider backed by a ``VLME`` embedding file.

    :meth:`lookup` returns the stored float32 vector bit-exactly;
    :meth:`embed_goal` and :meth:`embed_frame` return renormalized float64
    copies suitable for similarity computation.
    """

    def __init__(self, entries: Mapping[str, np.ndarray], dim: int):
        self.dim = dim
        self._entries = dict(entries)
        self._normalized: Dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def keys(self):
        return self._entries.keys()

    def lookup(self, key: str) -> np.ndarray:
        try:
            return self._entries[key]
        except KeyError:
            raise EmbeddingLookupError(f"no embedding stored under {key!r}") from None

    def _unit(self, key: str) -> np.ndarray:
        v = self._normalized.get(key)
        if v is None:
            v = make_embedding(self.lookup(key))
            self._normalized[key] = v
        return v

    def embed_goal(self, text: str) -> np.ndarray:
        key = f"goal:{text}"
        if key not in self._entries:
            goals = sorted(k for k in self._entries if k.startswith("goal:"))
            raise EmbeddingLookupError(
                f"no embedding stored under {key!r}; available goal keys: {goals}")
        return self._unit(key)

    def embed_frame(self, frame_id, scene: Optional[SceneDescriptor] = None) -> np.ndarray:
        return self._unit(f"frame:{frame_id}")


def store_write(path: Union[str, Path], entries: Mapping[str, np.ndarray]) -> None:
    """Write entries to a ``VLME`` file (single writer, atomic rename)."""
    items = list(entries.items())
    dims = {np.asarray(v).reshape(-1).shape[0] for _, v in items}
    if len(dims) > 1:
        raise DimensionMismatchError(f"entries have mixed dimensions: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(STORE_MAGIC, STORE_VERSION, dim, len(items)))
        for key, value in items:
            kb = key.encode("utf-8")
            if len(kb) > 0xFFFF:
                raise ValueError(f"key too long: {key[:40]!r}...")
            f.write(struct.pack("<H", len(kb)))
            f.write(kb)
            f.write(np.asarray(value, dtype="<f4").reshape(-1).tobytes())
    os.replace(tmp, path)


def store_read(path: Union[str, Path]) -> StoreProvider:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise StoreFormatError("truncated header", len(data))
    magic, version, dim, count = _HEADER.unpack_from(data, 0)
    if magic != STORE_MAGIC:
        raise StoreFormatError(f"bad magic {magic!r}", 0)
    if version != STORE_VERSION:
        raise StoreFormatError(f"unsupported version {version}", 4)
    off = _HEADER.size
    rec = 4 * dim
    entries: Dict[str, np.ndarray] = {}
    for _ in range(count):
        if off + 2 > len(data):
            raise StoreFormatError("truncated record key length", off)
        (klen,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + klen + rec > len(data):
            raise StoreFormatError("truncated record", off)
        try:
            key = data[off:off + klen].decode("utf-8")
        except UnicodeDecodeError:
            raise StoreFormatError("key is not valid UTF-8", off) from None
        off += klen
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off).copy()
        vec.setflags(write=False)
        entries[key] = vec
        off += rec
    if off != len(data):
        raise StoreFormatError("trailing bytes after last record", off)
    return StoreProvider(entries, dim)
