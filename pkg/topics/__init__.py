"""Golden topic derivation by k-means over slot features."""
from topics.kmeans import (
    TopicModel,
    kmeans_fit,
    assign_topic,
    assign_topics,
    golden_topic_sequences,
    fit_topics,
    matched_agreement,
)
