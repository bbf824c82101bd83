import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clgdrive.embeddings import (
    NEG_GOAL,
    POS_GOAL,
    DimensionMismatchError,
    EmbeddingLookupError,
    GoalPair,
    SceneDescriptor,
    StoreFormatError,
    SyntheticProvider,
    cosine_sim,
    embed_goal,
    make_embedding,
    scene_hazard,
    store_read,
    store_write,
    synthetic_embed,
)


def unit(rng, k=32):
    v = rng.standard_normal(k)
    return v / np.linalg.norm(v)


class TestCosine:
    def test_identical_is_one(self):
        e = make_embedding([3.0, 4.0, 0.0])
        assert cosine_sim(e, e) == pytest.approx(1.0, abs=1e-15)

    def test_antipodal_is_minus_one(self):
        e = make_embedding([1.0, 2.0, 2.0])
        assert cosine_sim(e, -e) == pytest.approx(-1.0, abs=1e-15)

    def test_orthonormal_is_zero(self):
        assert cosine_sim(np.eye(4)[0], np.eye(4)[1]) == 0.0

    def test_dimension_mismatch_names_both(self):
        with pytest.raises(DimensionMismatchError, match="3 vs 4"):
            cosine_sim(np.ones(3), np.ones(4))

    @given(st.integers(0, 2**31 - 1))
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        a, b = unit(rng), unit(rng)
        assert cosine_sim(a, b) == cosine_sim(b, a)
        assert -1.0 - 1e-12 <= cosine_sim(a, b) <= 1.0 + 1e-12

    def test_lipschitz_in_first_argument(self):
        rng = np.random.default_rng(7)
        u, v, w = (rng.standard_normal((10_000, 32)) for _ in range(3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        lhs = np.abs(np.einsum("ij,ij->i", u, w) - np.einsum("ij,ij->i", v, w))
        assert np.all(lhs <= np.linalg.norm(u - v, axis=1) + 1e-9)


class TestMakeEmbedding:
    def test_normalizes(self):
        v = make_embedding([0.0, 3.0, 4.0])
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
        assert not v.flags.writeable

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            make_embedding([0.0, 0.0])

    def test_strict_mode_checks_norm(self):
        with pytest.raises(ValueError, match="norm"):
            make_embedding([1.0, 1.0], normalize=False)
        assert make_embedding([0.6, 0.8], normalize=False)[1] == 0.8


class TestHazard:
    def test_collision_is_one(self):
        assert SceneDescriptor(collision=True, nearest_vehicle_gap=50.0).hazard == 1.0

    @pytest.mark.parametrize("gap, expected", [(math.inf, 0.0), (10.0, 0.0), (5.0, 0.5), (0.0, 1.0), (12.0, 0.0)])
    def test_gap_ramp(self, gap, expected):
        assert scene_hazard(False, gap, False) == pytest.approx(expected)

    def test_off_road_floor(self):
        assert scene_hazard(False, math.inf, True) == 0.5
        assert scene_hazard(False, 2.0, True) == pytest.approx(0.8)

    @given(st.booleans(), st.floats(0, 1e4), st.booleans())
    def test_in_unit_interval(self, c, gap, off):
        assert 0.0 <= scene_hazard(c, gap, off) <= 1.0


class TestSyntheticProvider:
    def test_goal_anchors(self):
        p = SyntheticProvider()
        assert np.array_equal(embed_goal(p, POS_GOAL), np.eye(32)[0])
        assert np.array_equal(embed_goal(p, NEG_GOAL), np.eye(32)[1])

    def test_goal_deterministic_bytes(self):
        p = SyntheticProvider()
        assert p.embed_goal("a car").tobytes() == SyntheticProvider().embed_goal("a car").tobytes()
        assert np.linalg.norm(p.embed_goal("a car")) == pytest.approx(1.0, abs=1e-12)

    def test_hazard_extremes_without_noise(self):
        assert np.array_equal(synthetic_embed(SceneDescriptor(collision=True), 0, epsilon=0.0), np.eye(32)[1])
        assert np.array_equal(synthetic_embed(SceneDescriptor(), 0, epsilon=0.0), np.eye(32)[0])

    def test_half_hazard_is_equiangular(self):
        v = synthetic_embed(SceneDescriptor(nearest_vehicle_gap=5.0), 0, epsilon=0.0)
        # normalize(0.5 e0 + 0.5 e1) has both components 0.5 / sqrt(0.5) = 1/sqrt(2)
        assert cosine_sim(v, np.eye(32)[0]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
        assert cosine_sim(v, np.eye(32)[1]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)

    @given(st.booleans(), st.floats(0, 100), st.floats(-3, 3), st.booleans(), st.integers(0, 1000))
    def test_unit_norm_and_pure(self, c, gap, lat, off, salt):
        s = SceneDescriptor(c, gap, lat, off)
        v = synthetic_embed(s, salt)
        assert abs(np.linalg.norm(v) - 1.0) <= 1e-6
        assert v.tobytes() == synthetic_embed(SceneDescriptor(c, gap, lat, off), salt).tobytes()

    def test_anchor_components_depend_on_hazard_only(self):
        a = synthetic_embed(SceneDescriptor(nearest_vehicle_gap=4.0, lateral_offset=0.1), 0)
        b = synthetic_embed(SceneDescriptor(nearest_vehicle_gap=4.0, lateral_offset=-0.7), 3)
        assert a[:2].tobytes() == b[:2].tobytes()
        assert not np.array_equal(a[2:], b[2:])

    def test_raw_score_straddles_thresholds(self):
        p = SyntheticProvider()
        raws = []
        for gap in np.linspace(0.0, 12.0, 25):
            v = p.embed_scene(SceneDescriptor(nearest_vehicle_gap=float(gap)))
            raws.append(0.5 * v[0] - 0.5 * v[1])
        assert min(raws) < -0.03 and max(raws) > 0.0


class TestStore:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        e = unit(rng, 8).astype(np.float32)
        store_write(tmp_path / "s.vlme", {"frame:0": e})
        got = store_read(tmp_path / "s.vlme").lookup("frame:0")
        assert got.tobytes() == e.astype("<f4").tobytes()

    def test_write_read_write_bytes(self, tmp_path):
        rng = np.random.default_rng(1)
        entries = {f"frame:{i}": unit(rng, 16) for i in range(5)}
        entries["goal:" + POS_GOAL] = unit(rng, 16)
        store_write(tmp_path / "a.vlme", entries)
        prov = store_read(tmp_path / "a.vlme")
        store_write(tmp_path / "b.vlme", {k: prov.lookup(k) for k in prov.keys()})
        assert (tmp_path / "a.vlme").read_bytes() == (tmp_path / "b.vlme").read_bytes()

    def test_file_size_from_layout(self, tmp_path):
        rng = np.random.default_rng(2)
        keys = ["frame:0", "goal:x"]
        store_write(tmp_path / "s.vlme", {k: unit(rng, 768) for k in keys})
        header = 4 + 4 + 4 + 8
        expected = header + sum(2 + len(k.encode()) + 4 * 768 for k in keys)
        assert (tmp_path / "s.vlme").stat().st_size == expected

    def test_header_fields(self, tmp_path):
        store_write(tmp_path / "s.vlme", {"frame:0": np.ones(3) / math.sqrt(3)})
        magic, version, dim, count = struct.unpack_from("<4sIIQ", (tmp_path / "s.vlme").read_bytes())
        assert (magic, version, dim, count) == (b"VLME", 1, 3, 1)

    def test_absent_key(self, tmp_path):
        store_write(tmp_path / "s.vlme", {"frame:0": np.ones(3)})
        prov = store_read(tmp_path / "s.vlme")
        with pytest.raises(EmbeddingLookupError):
            prov.lookup("frame:1")
        with pytest.raises(EmbeddingLookupError, match="available goal keys"):
            prov.embed_goal("nothing")

    def test_store_provider_renormalizes(self, tmp_path):
        store_write(tmp_path / "s.vlme", {"goal:g": np.array([3.0, 4.0]), "frame:7": np.array([0.0, 2.0])})
        prov = store_read(tmp_path / "s.vlme")
        assert np.allclose(prov.embed_goal("g"), [0.6, 0.8])
        assert np.allclose(prov.embed_frame(7), [0.0, 1.0])

    @pytest.mark.parametrize("mutate, offset", [
        (lambda b: b"XXXX" + b[4:], 0),
        (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], 4),
        (lambda b: b[:-3], 22),
        (lambda b: b[:10], 10),
    ])
    def test_format_errors_carry_offset(self, tmp_path, mutate, offset):
        store_write(tmp_path / "s.vlme", {"frame:0": np.ones(4) / 2})
        data = (tmp_path / "s.vlme").read_bytes()
        (tmp_path / "bad.vlme").write_bytes(mutate(data))
        with pytest.raises(StoreFormatError) as err:
            store_read(tmp_path / "bad.vlme")
        assert err.value.offset == offset

    def test_mixed_dimensions_rejected(self, tmp_path):
        with pytest.raises(DimensionMismatchError):
            store_write(tmp_path / "s.vlme", {"a": np.ones(2), "b": np.ones(3)})


class TestGoalPair:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            GoalPair("p", "n", np.eye(3)[0], np.eye(3)[1], 0.6, 0.5)

    def test_from_provider(self):
        g = GoalPair.from_provider(SyntheticProvider())
        assert g.alpha == g.beta == 0.5
        assert cosine_sim(g.pos_embedding, g.neg_embedding) == 0.0
