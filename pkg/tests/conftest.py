"""Shared fixtures: a small on-disk synthetic corpus and question sets.

Heavy artifacts are session-scoped; everything is seeded so reruns are stable.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from cate.corpus import load_manifest
from cate.questions import AugmentationWhitelist, build_question_set
from cate.synthworld import DEFAULT_WHITELIST, CorpusSpec, generate_corpus

settings.register_profile("suite", deadline=None, max_examples=30)
settings.load_profile("suite")


def default_whitelist() -> AugmentationWhitelist:
    return AugmentationWhitelist({k: list(v) for k, v in DEFAULT_WHITELIST.items()})


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """Synthetic corpus: 8 classes x 6 episodes, 32 frames, 48x48 canvas."""
    root = tmp_path_factory.mktemp("corpus")
    spec = CorpusSpec(n_per_class=6, n_frames=32, canvas=(48, 48), rng_seed=11)
    manifest = generate_corpus(root / "synth", spec)
    return manifest.parent


@pytest.fixture(scope="session")
def corpus(corpus_dir):
    return load_manifest(corpus_dir / "manifest.json")


@pytest.fixture(scope="session")
def train_questions(corpus):
    """Cross-sample questions over the train split, two per triplet."""
    qs = list(
        build_question_set(
            corpus,
            "train",
            mode="cross",
            whitelist=default_whitelist(),
            counterfactual_ratio=0.5,
            rng_seed=3,
            n_per_triplet=2,
        )
    )
    assert qs, "fixture corpus produced no questions"
    return qs


@pytest.fixture(scope="session")
def train_clips(corpus):
    return [corpus.load_clip(e.clip_id) for e in corpus.by_split("train")]


@pytest.fixture(scope="session")
def train_triplets(corpus):
    from cate.corpus import temporal_split

    return [temporal_split(corpus.load_clip(e.clip_id)) for e in corpus.by_split("train")]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_clip(rng, clip_id="clip", n=16, h=24, w=24, label="cls"):
    from cate.corpus import VideoClip

    frames = rng.integers(0, 256, size=(n, h, w, 3), dtype=np.uint8)
    return VideoClip(clip_id=clip_id, frames=frames, class_label=label)
