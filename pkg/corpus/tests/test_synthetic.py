import numpy as np
import pytest

from corpus.synthetic import SynthConfig, blob_centers, synthesize_corpus, topic_of_word
from corpus.vocab import EOS
from diffcore.errors import ConfigError, HSRLError


def test_content_words_belong_to_their_topic():
    corpus = synthesize_corpus(SynthConfig(K=2, num_records=10, seed=1))
    for record in corpus:
        for k, sentence in zip(record.golden_topics, record.sentences):
            assert sentence[-1] == EOS
            owners = {topic_of_word(corpus.vocab.token(t)) for t in sentence[:-1]} - {None}
            assert owners == {k}


def test_same_seed_same_corpus():
    cfg = SynthConfig(num_records=20, seed=7)
    a, b = synthesize_corpus(cfg), synthesize_corpus(cfg)
    for ra, rb in zip(a, b):
        assert ra.features.tobytes() == rb.features.tobytes()
        assert ra.sentences == rb.sentences
        assert ra.golden_topics == rb.golden_topics


def test_splits_share_vocab_but_not_records():
    cfg = SynthConfig(num_records=5, seed=2)
    train, valid = synthesize_corpus(cfg, "train"), synthesize_corpus(cfg, "valid")
    assert train.vocab == valid.vocab
    assert train.split == "train" and valid.split == "valid"
    assert train.records[0].features.tobytes() != valid.records[0].features.tobytes()


def test_blob_centres_are_separation_sigmas_apart():
    cfg = SynthConfig(K=4, d_v=6, separation=10.0, sigma=0.5)
    centers = blob_centers(cfg)
    for i in range(4):
        for j in range(i + 1, 4):
            assert np.linalg.norm(centers[i] - centers[j]) == pytest.approx(5.0)


def test_sentence_length_range():
    corpus = synthesize_corpus(SynthConfig(num_records=30, sentence_len_range=(4, 5), seed=0))
    lengths = {len(s) - 1 for r in corpus for s in r.sentences}
    assert lengths <= {4, 5}


def test_full_coherence_walks_topics_in_order():
    corpus = synthesize_corpus(SynthConfig(K=3, coherence=1.0, num_records=5))
    for record in corpus:
        topics = record.golden_topics
        assert all(b == (a + 1) % 3 for a, b in zip(topics, topics[1:]))


@pytest.mark.parametrize(
    "overrides",
    [{"K": 1}, {"K": 8, "d_v": 4}, {"sentence_len_range": (20, 30)}, {"vocab_per_topic": 2}],
)
def test_inconsistent_config(overrides):
    with pytest.raises(ConfigError):
        SynthConfig(**overrides)


def test_config_errors_name_the_config_invariant():
    with pytest.raises(HSRLError) as info:
        SynthConfig(K=8, d_v=4)
    assert info.value.invariant == "config"
    assert "SynthConfig" in str(info.value) and "d_v >= K" in str(info.value)
