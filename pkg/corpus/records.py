"""
Story records, corpora and the image-sequence encoder (mean pooling).
"""
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from corpus.vocab import EOS, Vocab
from diffcore.errors import DimensionError, SchemaError, TopicIndexError

SPLITS = ("train", "valid", "test")


def mean_pool(features) -> np.ndarray:
    """v̄ = mean over the slot axis of an (n, d_v) or batched (B, n, d_v) feature array"""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim < 2 or features.shape[-2] == 0:
        raise DimensionError(f"mean_pool: needs at least one feature vector, got shape {features.shape}")
    return features.sum(axis=-2) / features.shape[-2]


@dataclass
class StoryRecord:
    """n feature vectors, n EOS-terminated reference sentences and optional golden topics"""

    features: np.ndarray
    sentences: List[List[int]]
    golden_topics: Optional[List[int]] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.sentences = [[int(t) for t in s] for s in self.sentences]
        if self.golden_topics is not None:
            self.golden_topics = [int(k) for k in self.golden_topics]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d_v(self) -> int:
        return self.features.shape[1]

    def validate(self, vocab_size: Optional[int] = None, K: Optional[int] = None):
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise SchemaError(f"features must be a non-empty n x d_v array, got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise SchemaError("features contain non-finite values")
        if len(self.sentences) != self.n:
            raise SchemaError(f"{self.n} features but {len(self.sentences)} sentences")
        for i, sentence in enumerate(self.sentences):
            if len(sentence) < 2 or sentence[-1] != EOS or EOS in sentence[:-1]:
                raise SchemaError(f"sentence {i} must hold at least one word and end in a single EOS")
            if vocab_size is not None and (min(sentence) < 0 or max(sentence) >= vocab_size):
                raise SchemaError(f"sentence {i} has token ids outside [0, {vocab_size})")
        if self.golden_topics is not None:
            if len(self.golden_topics) != self.n:
                raise SchemaError(f"{self.n} features but {len(self.golden_topics)} topics")
            if min(self.golden_topics) < 0 or (K is not None and max(self.golden_topics) >= K):
                raise TopicIndexError(f"golden topics {self.golden_topics} outside [0, {K})")


@dataclass
class Corpus:
    records: List[StoryRecord]
    vocab: Vocab
    split: str = "train"
    unk_count: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise SchemaError(f"split must be one of {SPLITS}, got {self.split!r}")
        self.validate()

    def validate(self, K: Optional[int] = None):
        """Check every record invariant eagerly; all records share n and d_v"""
        shapes = {r.features.shape for r in self.records}
        if len(shapes) > 1:
            raise SchemaError(f"records disagree on (n, d_v): {sorted(shapes)}")
        for record in self.records:
            record.validate(len(self.vocab), K)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def n(self) -> int:
        return self.records[0].n if self.records else 0

    @property
    def d_v(self) -> int:
        return self.records[0].d_v if self.records else 0

    @property
    def has_topics(self) -> bool:
        return bool(self.records) and all(r.golden_topics is not None for r in self.records)

    def features(self) -> np.ndarray:
        """All slot features stacked as (num_records * n, d_v)"""
        return np.concatenate([r.features for r in self.records], axis=0)

    def with_topics(self, topics: Sequence[Sequence[int]]) -> "Corpus":
        records = [replace(r, golden_topics=list(t)) for r, t in zip(self.records, topics)]
        return Corpus(records, self.vocab, self.split, self.unk_count)

    def subset(self, indices: Sequence[int]) -> "Corpus":
        return Corpus([self.records[i] for i in indices], self.vocab, self.split, self.unk_count)

    def texts(self) -> List[List[str]]:
        """Reference stories as surface text"""
        return [[self.vocab.decode_sentence(s) for s in r.sentences] for r in self.records]
