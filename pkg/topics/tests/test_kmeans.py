import numpy as np
import pytest

from corpus.synthetic import SynthConfig, synthesize_corpus
from diffcore.errors import ConfigError, DimensionError
from diffcore.rng import SeededRng
from topics.kmeans import (
    TopicModel,
    assign_topic,
    assign_topics,
    fit_topics,
    golden_topic_sequences,
    kmeans_fit,
    matched_agreement,
)


def test_m_equals_k_distinct_points():
    points = np.array([[0.0, 0.0], [5.0, 1.0], [-3.0, 4.0]])
    model = kmeans_fit(points, 3, seed=0)
    assert model.inertia == 0.0
    assert sorted(map(tuple, model.centroids)) == sorted(map(tuple, points))


def test_two_one_dimensional_blobs():
    model = kmeans_fit(np.array([[0.0], [0.1], [10.0], [10.1]]), 2, seed=1)
    np.testing.assert_allclose(np.sort(model.centroids[:, 0]), [0.05, 10.05], atol=1e-12)


def test_inertia_history_is_non_increasing():
    for seed in range(5):
        X = SeededRng(seed).normal(0.0, 1.0, (200, 3))
        model = kmeans_fit(X, 6, seed=seed)
        history = np.array(model.inertia_history)
        assert np.all(np.diff(history) <= 1e-9)
        assert model.inertia >= 0


def test_too_few_points():
    with pytest.raises(ConfigError):
        kmeans_fit(np.zeros((2, 3)), 3)


def test_assign_exact_centroid():
    centroids = SeededRng(0).normal(0.0, 1.0, (5, 4))
    model = TopicModel(centroids)
    assert assign_topic(model, centroids[3]) == 3


def test_assign_tie_goes_to_lowest_index():
    model = TopicModel(np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]))
    assert assign_topic(model, [2.0, 0.0]) == 1


def test_assign_matches_linear_scan():
    rng = SeededRng(8)
    model = TopicModel(rng.normal(0.0, 1.0, (6, 3)))
    queries = rng.normal(0.0, 2.0, (1000, 3))
    for q, k in zip(queries, assign_topics(model, queries)):
        best, best_d = 0, np.inf
        for j, c in enumerate(model.centroids):
            d = float(np.sum((q - c) ** 2))
            if d < best_d:
                best, best_d = j, d
        assert k == best
        assert 0 <= k < model.K


def test_assign_dimension_mismatch():
    model = TopicModel(np.zeros((2, 3)) + [[0.0], [1.0]])
    with pytest.raises(DimensionError):
        assign_topic(model, [0.0, 0.0])


def test_golden_topics_on_exact_centroids_and_idempotence():
    corpus = synthesize_corpus(SynthConfig(num_records=3, K=3, d_v=4, seed=0))
    model = TopicModel(np.eye(3, 4) * 100.0)
    exact = corpus.with_topics([r.golden_topics for r in corpus])
    for record in exact.records:
        record.features = model.centroids[record.golden_topics]
    once = golden_topic_sequences(model, exact)
    twice = golden_topic_sequences(model, once)
    assert [r.golden_topics for r in once] == [r.golden_topics for r in exact]
    assert [r.golden_topics for r in twice] == [r.golden_topics for r in once]


def test_blob_corpus_topics_are_recovered():
    cfg = SynthConfig(num_records=200, K=4, separation=10.0, seed=5)
    train = synthesize_corpus(cfg)
    construction = [r.golden_topics for r in train]
    model = fit_topics(train, cfg.K, seed=0)
    derived = golden_topic_sequences(model, train)
    agreement = matched_agreement([r.golden_topics for r in derived], construction, cfg.K)
    assert agreement >= 0.99


def test_matched_agreement_ignores_label_names():
    assert matched_agreement([1, 1, 0, 0, 2], [0, 0, 2, 2, 1], 3) == 1.0
    assert matched_agreement([0, 0, 0, 1], [0, 0, 1, 1], 2) == 0.75


def test_json_round_trip(tmp_path):
    model = kmeans_fit(SeededRng(2).normal(0.0, 1.0, (30, 2)), 3, seed=2)
    model.save(tmp_path / "topics.json")
    loaded = TopicModel.load(tmp_path / "topics.json")
    assert loaded.centroids.tobytes() == model.centroids.tobytes()
    assert loaded.K == 3 and loaded.d_v == 2


@pytest.mark.parametrize("seed", [2 ** 40, 5_000_000_000, -3])
def test_seeds_beyond_32_bits(seed):
    X = np.array([[0.0], [0.1], [10.0], [10.1]])
    a = kmeans_fit(X, 2, seed=seed)
    b = kmeans_fit(X, 2, seed=seed)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    np.testing.assert_allclose(np.sort(a.centroids[:, 0]), [0.05, 10.05], atol=1e-12)
