"""Domain-type tests: boxes, region grids, queries, vocab, trajectories."""

import numpy as np
import pytest

from relground.data import (BBox, EmbeddingTable, RegionProposal,
                            RelationInstance, RelationParseError, Trajectory,
                            VideoFeatures, VideoRelationSample, Vocabulary,
                            embed_tokens, format_relation, geometry_feature,
                            tokenize_relation)


def _grid(n_frames, m, d=4, width=100.0):
    rng = np.random.Generator(np.random.PCG64(3))
    rows = []
    for _ in range(n_frames):
        row = []
        for _ in range(m):
            x0, y0 = rng.uniform(0, width - 20, size=2)
            row.append(RegionProposal(BBox(x0, y0, x0 + 10, y0 + 10),
                                      rng.standard_normal(d)))
        rows.append(row)
    return rows


class TestBBox:
    def test_area(self):
        assert BBox(1.0, 2.0, 5.0, 6.0).area == 16.0

    def test_degenerate_area(self):
        assert BBox(3.0, 3.0, 3.0, 3.0).area == 0.0

    def test_inverted_rejected(self):
        with pytest.raises(ValueError):
            BBox(5.0, 0.0, 1.0, 4.0)
        with pytest.raises(ValueError):
            BBox(0.0, 5.0, 4.0, 1.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            BBox(0.0, 0.0, np.nan, 1.0)
        with pytest.raises(ValueError):
            BBox(0.0, 0.0, np.inf, 1.0)

    def test_clamped(self):
        box = BBox(-5.0, 10.0, 120.0, 50.0).clamped(100.0, 40.0)
        assert (box.x_min, box.y_min, box.x_max, box.y_max) == (0.0, 10.0, 100.0, 40.0)

    def test_as_array(self):
        np.testing.assert_array_equal(BBox(1, 2, 3, 4).as_array(),
                                      [1.0, 2.0, 3.0, 4.0])


class TestGeometryFeature:
    def test_values(self):
        feat = geometry_feature(BBox(10, 20, 60, 100), 100.0, 200.0)
        np.testing.assert_allclose(feat, [0.1, 0.1, 0.6, 0.5, 0.2])

    def test_bad_frame_dims(self):
        with pytest.raises(ValueError):
            geometry_feature(BBox(0, 0, 1, 1), 0.0, 10.0)


class TestRegionProposal:
    def test_appearance_coerced_to_f64(self):
        r = RegionProposal(BBox(0, 0, 1, 1), np.float32([1, 2, 3]))
        assert r.appearance.dtype == np.float64

    def test_non_finite_appearance_rejected(self):
        with pytest.raises(ValueError):
            RegionProposal(BBox(0, 0, 1, 1), [1.0, np.nan])


class TestVideoFeatures:
    def test_matrix_shapes_and_order(self):
        grid = _grid(3, 2, d=4)
        vf = VideoFeatures("v", 100.0, 100.0, 3, [0, 1, 2], grid)
        app = vf.appearance_matrix()
        geo = vf.geometry_matrix()
        assert app.shape == (6, 4)
        assert geo.shape == (6, 5)
        # frame-major: row i*m + j is proposal j of frame i
        np.testing.assert_array_equal(app[3], grid[1][1].appearance)
        np.testing.assert_allclose(
            geo[5], geometry_feature(grid[2][1].box, 100.0, 100.0))

    def test_properties(self):
        vf = VideoFeatures("v", 100.0, 100.0, 10, [0, 4, 9], _grid(3, 2))
        assert vf.n_frames == 3
        assert vf.regions_per_frame == 2
        assert vf.appearance_dim == 4
        assert vf.boxes()[1][0] == vf.regions[1][0].box

    def test_non_increasing_indices_rejected(self):
        with pytest.raises(ValueError):
            VideoFeatures("v", 100.0, 100.0, 10, [0, 3, 3], _grid(3, 2))

    def test_index_outside_video_rejected(self):
        with pytest.raises(ValueError):
            VideoFeatures("v", 100.0, 100.0, 3, [0, 1, 3], _grid(3, 2))

    def test_uneven_region_rows_rejected(self):
        grid = _grid(3, 2)
        grid[1] = grid[1][:1]
        with pytest.raises(ValueError):
            VideoFeatures("v", 100.0, 100.0, 3, [0, 1, 2], grid)

    def test_row_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            VideoFeatures("v", 100.0, 100.0, 5, [0, 1], _grid(3, 2))


class TestRelationQuery:
    def test_tokenize_basic(self):
        q = tokenize_relation("dog-chase-cat")
        assert q.subject_tokens == ("dog",)
        assert q.predicate_tokens == ("chase",)
        assert q.object_tokens == ("cat",)
        assert q.raw == "dog-chase-cat"

    def test_tokenize_multiword(self):
        q = tokenize_relation("giant_panda-sit_next_to-Person")
        assert q.subject_tokens == ("giant", "panda")
        assert q.predicate_tokens == ("sit", "next", "to")
        assert q.object_tokens == ("person",)
        assert q.subject == "giant_panda"
        assert q.predicate == "sit_next_to"

    def test_format_round_trip(self):
        raw = "giant_panda-move_toward-person"
        assert format_relation(tokenize_relation(raw)) == raw

    def test_wrong_part_count(self):
        with pytest.raises(RelationParseError):
            tokenize_relation("dog-chase")
        with pytest.raises(RelationParseError):
            tokenize_relation("a-b-c-d")

    def test_empty_part(self):
        with pytest.raises(RelationParseError):
            tokenize_relation("dog--cat")

    def test_empty_word(self):
        with pytest.raises(RelationParseError):
            tokenize_relation("dog-walk__fast-cat")

    def test_all_tokens(self):
        q = tokenize_relation("a_b-c-d")
        assert q.all_tokens() == ("a", "b", "c", "d")


class TestEmbeddingTable:
    def test_known_vector(self):
        t = EmbeddingTable(3, vectors={"dog": [1.0, 2.0, 3.0]})
        np.testing.assert_array_equal(t.lookup("dog"), [1.0, 2.0, 3.0])
        assert "dog" in t and "cat" not in t
        assert len(t) == 1

    def test_wrong_dimension_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingTable(3, vectors={"dog": [1.0, 2.0]})

    def test_fallback_unit_norm_and_stable(self):
        a = EmbeddingTable(8, fallback_seed=5)
        b = EmbeddingTable(8, fallback_seed=5)
        v = a.lookup("unknown")
        assert v.shape == (8,)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(v, b.lookup("unknown"))

    def test_fallback_depends_on_seed_and_token(self):
        t = EmbeddingTable(8, fallback_seed=0)
        other_seed = EmbeddingTable(8, fallback_seed=1)
        assert not np.array_equal(t.lookup("dog"), other_seed.lookup("dog"))
        assert not np.array_equal(t.lookup("dog"), t.lookup("cat"))

    def test_embed_tokens_modes(self):
        t = EmbeddingTable(2, vectors={"a": [0.0, 2.0], "b": [4.0, 0.0]})
        np.testing.assert_array_equal(embed_tokens(("a", "b"), t, "single"),
                                      [0.0, 2.0])
        np.testing.assert_array_equal(embed_tokens(("a", "b"), t, "average"),
                                      [2.0, 1.0])
        with pytest.raises(ValueError):
            embed_tokens((), t)
        with pytest.raises(ValueError):
            embed_tokens(("a",), t, "sum")


class TestVocabulary:
    def test_reserved_prefix(self):
        v = Vocabulary(["dog", "cat"])
        assert v.tokens[:3] == ["<start>", "<end>", "<pad>"]
        assert v.start_index == 0
        assert v.end_index == 1

    def test_round_trip_and_dedupe(self):
        v = Vocabulary(["dog", "cat", "dog"])
        assert len(v) == 5
        assert v.to_token(v.to_index("cat")) == "cat"

    def test_unknown_token(self):
        with pytest.raises(KeyError):
            Vocabulary(["dog"]).to_index("zebra")

    def test_from_queries_sorted(self):
        qs = [tokenize_relation("dog-chase-cat"),
              tokenize_relation("cat-watch-bird")]
        v = Vocabulary.from_queries(qs)
        assert v.tokens[3:] == ["bird", "cat", "chase", "dog", "watch"]


class TestTrajectory:
    def test_box_count_enforced(self):
        with pytest.raises(ValueError):
            Trajectory(2, 4, [BBox(0, 0, 1, 1)] * 2)

    def test_empty_span_rejected(self):
        with pytest.raises(ValueError):
            Trajectory(5, 4, [])

    def test_box_at(self):
        boxes = [BBox(i, 0, i + 1, 1) for i in range(3)]
        traj = Trajectory(10, 12, boxes)
        assert traj.box_at(11) == boxes[1]
        assert len(traj) == 3
        with pytest.raises(IndexError):
            traj.box_at(9)
        with pytest.raises(IndexError):
            traj.box_at(13)


class TestRelationInstance:
    def test_span_mismatch_rejected(self):
        a = Trajectory(0, 1, [BBox(0, 0, 1, 1)] * 2)
        b = Trajectory(0, 2, [BBox(0, 0, 1, 1)] * 3)
        with pytest.raises(ValueError):
            RelationInstance(a, b)

    def test_span_properties(self):
        t = Trajectory(3, 5, [BBox(0, 0, 1, 1)] * 3)
        inst = RelationInstance(t, t)
        assert (inst.start_frame, inst.end_frame) == (3, 5)


class TestVideoRelationSample:
    def test_strip_ground_truth(self):
        t = Trajectory(0, 0, [BBox(0, 0, 1, 1)])
        s = VideoRelationSample("v1", tokenize_relation("a-b-c"),
                                instances=[RelationInstance(t, t)])
        bare = s.without_ground_truth()
        assert bare.instances == []
        assert s.instances  # original untouched
        assert bare.key == ("v1", "a-b-c")
