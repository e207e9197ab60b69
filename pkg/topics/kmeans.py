"""
k-means topic induction.

Slot feature vectors are clustered with Lloyd's algorithm (k-means++ seeding);
each cluster is a topic and its id becomes the golden topic of every slot
assigned to it.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import kmeans_plusplus
from sklearn.metrics import confusion_matrix

from corpus.records import Corpus
from diffcore.errors import ConfigError, DimensionError, SchemaError
from diffcore.rng import SeededRng

logger = logging.getLogger(__name__)

# rng stream key for k-means++ seeding
SEEDING_STREAM = 4000


@dataclass
class TopicModel:
    """K centroids in feature space plus the final within-cluster sum of squares"""
    centroids: np.ndarray
    inertia: float = 0.0
    inertia_history: List[float] = field(default_factory=list)
    iterations: int = 0

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 2:
            raise SchemaError(f"topic model needs at least 2 centroids, got shape {self.centroids.shape}")
        if not np.all(np.isfinite(self.centroids)):
            raise SchemaError("topic model centroids must be finite")
        if self.inertia < 0:
            raise SchemaError(f"inertia must be >= 0, got {self.inertia}")

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def d_v(self) -> int:
        return self.centroids.shape[1]

    def to_json(self) -> str:
        return json.dumps({
            "K": self.K,
            "d_v": self.d_v,
            "centroids": self.centroids.reshape(-1).tolist(),
            "inertia": self.inertia,
            "iterations": self.iterations,
        })

    @classmethod
    def from_json(cls, text: str) -> "TopicModel":
        obj = json.loads(text)
        try:
            centroids = np.asarray(obj["centroids"], dtype=np.float64).reshape(obj["K"], obj["d_v"])
        except (KeyError, ValueError) as e:
            raise SchemaError(f"malformed topic model: {e}")
        return cls(centroids, inertia=float(obj.get("inertia", 0.0)), iterations=int(obj.get("iterations", 0)))

    def save(self, path: Union[str, Path]):
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")
        logger.info(f"Saved topic model (K={self.K}, d_v={self.d_v}) to {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TopicModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def squared_distances(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(m, K) matrix of squared Euclidean distances"""
    diff = vectors[:, None, :] - centroids[None, :, :]
    return np.einsum("mkd,mkd->mk", diff, diff)


def kmeans_fit(vectors, K: int, seed: int = 0, max_iter: int = 100) -> TopicModel:
    """
    Lloyd's algorithm from k-means++ seeds.

    Stops at an assignment fixpoint or after max_iter updates. An emptied
    cluster is re-seeded at the point farthest from its current centroid.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"kmeans_fit: expects an (m, d_v) array, got shape {X.shape}")
    if K < 2:
        raise ConfigError(f"kmeans_fit: K must be >= 2, got {K}")
    if X.shape[0] < K:
        raise ConfigError(f"kmeans_fit: {X.shape[0]} points cannot form {K} clusters")

    # sklearn takes 32-bit seeds; any package seed maps into that range
    sklearn_seed = int(SeededRng(seed).child(SEEDING_STREAM).integers(0, 2 ** 32))
    centroids, _ = kmeans_plusplus(X, K, random_state=sklearn_seed)
    centroids = centroids.astype(np.float64)
    labels = None
    history: List[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        distances = squared_distances(X, centroids)
        new_labels = np.argmin(distances, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            iterations -= 1
            break
        labels = new_labels
        updated = centroids.copy()
        own = distances[np.arange(len(X)), labels]
        for j in range(K):
            members = labels == j
            if members.any():
                updated[j] = X[members].mean(axis=0)
        for j in range(K):
            if not (labels == j).any():
                farthest = int(np.argmax(own))
                logger.warning(f"k-means: cluster {j} emptied at iteration {iterations}, re-seeding from point {farthest}")
                updated[j] = X[farthest]
                labels[farthest] = j
                own[farthest] = -1.0
        centroids = updated
        history.append(float(np.sum((X - centroids[labels]) ** 2)))

    inertia = float(squared_distances(X, centroids).min(axis=1).sum())
    history.append(inertia)
    logger.info(f"k-means converged after {iterations} iterations (K={K}, inertia={inertia:.4f})")
    return TopicModel(centroids, inertia=inertia, inertia_history=history, iterations=iterations)


def assign_topics(model: TopicModel, vectors) -> np.ndarray:
    """Nearest centroid per row; ties go to the lowest topic id"""
    X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if X.shape[-1] != model.d_v:
        raise DimensionError(f"assign_topic: vector shape {X.shape} does not match centroids {model.centroids.shape}")
    return np.argmin(squared_distances(X, model.centroids), axis=1)


def assign_topic(model: TopicModel, v) -> int:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"assign_topic: expects a single vector, got shape {v.shape}")
    return int(assign_topics(model, v[None, :])[0])


def golden_topic_sequences(model: TopicModel, corpus: Corpus) -> Corpus:
    """Copy of corpus with every slot's golden topic set to its nearest centroid"""
    if corpus.records and corpus.d_v != model.d_v:
        raise DimensionError(f"corpus d_v {corpus.d_v} does not match topic model d_v {model.d_v}")
    topics = [assign_topics(model, record.features).tolist() for record in corpus.records]
    return corpus.with_topics(topics)


def fit_topics(corpus: Corpus, K: int, seed: int = 0, max_iter: int = 100) -> TopicModel:
    """k-means over every slot of a (training) corpus"""
    return kmeans_fit(corpus.features(), K, seed=seed, max_iter=max_iter)


def matched_agreement(predicted, reference, K: int) -> float:
    """Fraction of labels that agree under the best one-to-one relabelling of predicted topics"""
    predicted = np.asarray(predicted).reshape(-1)
    reference = np.asarray(reference).reshape(-1)
    if predicted.shape != reference.shape or predicted.size == 0:
        raise DimensionError(f"matched_agreement: label arrays {predicted.shape} and {reference.shape}")
    counts = confusion_matrix(reference, predicted, labels=list(range(K)))
    rows, cols = linear_sum_assignment(-counts)
    return float(counts[rows, cols].sum() / predicted.size)
