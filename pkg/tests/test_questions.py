"""Question assembly: counterfactuals, whitelist gating, serialization."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cate.errors import ConfigError, DataError
from cate.questions import (
    COUNTERFACTUAL_KINDS,
    AugmentationWhitelist,
    QuestionSetReader,
    apply_counterfactual,
    build_question_set,
    make_question,
    write_question_set,
)

from .conftest import default_whitelist, random_clip


class TestCounterfactuals:
    def test_temporal_reverse_oracle(self, rng):
        clip = random_clip(rng, n=7)
        out = apply_counterfactual(clip, "temporal_reverse")
        assert np.array_equal(out.frames, clip.frames[::-1])

    def test_static_oracle(self, rng):
        clip = random_clip(rng, n=7)
        out = apply_counterfactual(clip, "static")
        assert out.frames.shape == clip.frames.shape
        assert np.array_equal(out.frames, np.broadcast_to(clip.frames[0], clip.frames.shape))
        # zero variance across time, everywhere
        assert float(out.frames.astype(float).var(axis=0).max()) == 0.0

    def test_horizontal_flip_oracle(self, rng):
        clip = random_clip(rng, n=5)
        out = apply_counterfactual(clip, "horizontal_flip")
        assert np.array_equal(out.frames, clip.frames[:, :, ::-1, :])

    def test_involutions_bit_exact(self, rng):
        clip = random_clip(rng, n=9)
        twice_r = apply_counterfactual(apply_counterfactual(clip, "temporal_reverse"), "temporal_reverse")
        twice_f = apply_counterfactual(apply_counterfactual(clip, "horizontal_flip"), "horizontal_flip")
        assert np.array_equal(twice_r.frames, clip.frames)
        assert np.array_equal(twice_f.frames, clip.frames)

    def test_unknown_kind(self, rng):
        with pytest.raises(DataError):
            apply_counterfactual(random_clip(rng), "vertical_flip")


class TestWhitelist:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            AugmentationWhitelist({"x": ["zoom"]})

    def test_missing_class_means_no_kinds(self):
        wl = AugmentationWhitelist({"a": ["static"]})
        assert wl.kinds_for("a") == ["static"]
        assert wl.kinds_for("b") == []

    def test_save_load_round_trip(self, tmp_path):
        wl = default_whitelist()
        wl.save(tmp_path / "wl.json")
        back = AugmentationWhitelist.load(tmp_path / "wl.json")
        assert back.kinds_by_class == wl.kinds_by_class


class TestMakeQuestion:
    def test_shape_and_determinism(self, train_triplets):
        pool = train_triplets
        q1 = make_question(pool[0], pool, "cross", default_whitelist(), rng_seed=5)
        q2 = make_question(pool[0], pool, "cross", default_whitelist(), rng_seed=5)
        assert len(q1.options) == 4
        assert q1.correct_index == q2.correct_index
        for a, b in zip(q1.options, q2.options):
            assert np.array_equal(a.frames, b.frames)

    def test_cross_mode_correct_comes_from_partner_clip(self, train_triplets):
        pool = train_triplets
        for seed in range(6):
            q = make_question(pool[0], pool, "cross", default_whitelist(), rng_seed=seed)
            prov = q.provenance[q.correct_index]
            assert prov.source_clip_id != q.states_clip_id
            assert prov.class_label == pool[0].class_label

    def test_same_mode_correct_is_own_action(self, train_triplets):
        pool = train_triplets
        q = make_question(pool[0], pool, "same", default_whitelist(), rng_seed=0)
        assert q.provenance[q.correct_index].source_clip_id == q.states_clip_id

    def test_cross_mode_without_partner_fails(self, train_triplets):
        pool = train_triplets
        lonely = [t for t in pool if t.class_label == pool[0].class_label][:1]
        mixed = lonely + [t for t in pool if t.class_label != pool[0].class_label]
        with pytest.raises(DataError):
            make_question(lonely[0], mixed, "cross", default_whitelist(), rng_seed=0)

    def test_ratio_zero_means_no_counterfactuals(self, train_triplets):
        pool = train_triplets
        for seed in range(8):
            q = make_question(
                pool[0], pool, "cross", default_whitelist(), counterfactual_ratio=0.0, rng_seed=seed
            )
            kinds = {p.kind for p in q.provenance}
            assert "counterfactual" not in kinds

    def test_ratio_one_fills_with_whitelisted_kinds(self, train_triplets):
        pool = train_triplets
        # move_* classes whitelist all three kinds, so all distractors become
        # counterfactuals and no kind repeats
        movers = [t for t in pool if t.class_label == "move_left"]
        q = make_question(
            movers[0], pool, "cross", default_whitelist(), counterfactual_ratio=1.0, rng_seed=1
        )
        cf = [p for p in q.provenance if p.kind == "counterfactual"]
        assert len(cf) == 3
        kinds = [p.counterfactual_kind for p in cf]
        assert len(set(kinds)) == 3
        assert set(kinds) <= set(COUNTERFACTUAL_KINDS)

    def test_whitelist_gating_never_violated(self, train_triplets):
        pool = train_triplets
        wl = default_whitelist()
        for t in pool:
            for seed in range(4):
                q = make_question(t, pool, "cross", wl, counterfactual_ratio=0.9, rng_seed=seed)
                cls = q.provenance[q.correct_index].class_label
                for p in q.provenance:
                    if p.kind == "counterfactual":
                        assert p.counterfactual_kind in wl.kinds_for(cls)

    def test_empty_whitelist_falls_back_to_other_classes(self, train_triplets):
        pool = train_triplets
        q = make_question(
            pool[0], pool, "cross", AugmentationWhitelist({}), counterfactual_ratio=1.0, rng_seed=2
        )
        assert all(p.kind in ("correct", "other_class") for p in q.provenance)

    def test_bad_mode_and_ratio(self, train_triplets):
        pool = train_triplets
        with pytest.raises(ConfigError):
            make_question(pool[0], pool, "within", default_whitelist())
        with pytest.raises(ConfigError):
            make_question(pool[0], pool, "cross", default_whitelist(), counterfactual_ratio=1.5)

    @given(seed=st.integers(0, 10_000))
    def test_correct_index_matches_provenance(self, train_triplets, seed):
        pool = train_triplets
        q = make_question(pool[seed % len(pool)], pool, "cross", default_whitelist(), rng_seed=seed)
        kinds = [p.kind for p in q.provenance]
        assert kinds.count("correct") == 1
        assert kinds.index("correct") == q.correct_index


class TestQuestionSet:
    def test_unique_ids_and_mode(self, train_questions):
        ids = [q.question_id for q in train_questions]
        assert len(ids) == len(set(ids))
        assert all(q.mode == "cross" for q in train_questions)

    def test_build_covers_every_train_clip(self, corpus, train_questions):
        built_from = {q.states_clip_id for q in train_questions}
        assert built_from == {e.clip_id for e in corpus.by_split("train")}

    def test_split_isolation(self, corpus, train_questions):
        train_ids = {e.clip_id for e in corpus.by_split("train")}
        for q in train_questions:
            assert q.states_clip_id in train_ids
            for p in q.provenance:
                assert p.source_clip_id in train_ids

    def test_file_round_trip_and_determinism(self, corpus, tmp_path):
        def build():
            # val has one clip per class, so pair states with their own action
            return build_question_set(
                corpus, "val", mode="same", whitelist=default_whitelist(), rng_seed=7
            )

        n1 = write_question_set(build(), tmp_path / "a.jsonl")
        n2 = write_question_set(build(), tmp_path / "b.jsonl")
        assert n1 == n2 > 0
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

        reader = QuestionSetReader(tmp_path / "a.jsonl", corpus)
        rebuilt = [reader.materialize(r) for r in reader.records]
        original = list(build())
        assert len(rebuilt) == len(original)
        for a, b in zip(original, rebuilt):
            assert a.question_id == b.question_id
            assert a.correct_index == b.correct_index
            assert np.array_equal(a.initial_state.frames, b.initial_state.frames)
            assert np.array_equal(a.final_state.frames, b.final_state.frames)
            for oa, ob in zip(a.options, b.options):
                assert np.array_equal(oa.frames, ob.frames)

    def test_empty_split_fails(self, corpus):
        with pytest.raises(DataError):
            list(build_question_set(corpus, "dev"))

    def test_reader_missing_file(self, corpus, tmp_path):
        with pytest.raises(DataError):
            QuestionSetReader(tmp_path / "none.jsonl", corpus)
