"""
Synthetic topic-structured story corpus.

Every image slot is drawn from one of K Gaussian blobs whose centres sit on
scaled axis vectors, so any two centres are `separation` standard deviations
apart. The slot's sentence is generated from a small template grammar whose
content words belong to the blob's topic only; function words are shared.
"""
import logging
import re
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from corpus.records import SPLITS, Corpus, StoryRecord
from corpus.vocab import RESERVED, Vocab
from diffcore.errors import ConfigError, config_error
from diffcore.rng import SeededRng

logger = logging.getLogger(__name__)

FUNCTION_WORDS = ("the", "a", "and", "was", ".")

# N noun, V verb, A adjective; every other symbol is a literal function word
TEMPLATES = (
    ("the", "N", "V", "."),
    ("a", "A", "N", "V", "."),
    ("a", "N", "was", "A", "."),
    ("the", "N", "V", "the", "N", "."),
    ("the", "A", "N", "V", "the", "N", "."),
    ("the", "N", "and", "the", "N", "V", "."),
    ("the", "A", "N", "and", "the", "A", "N", "V", "."),
)

_CONTENT = re.compile(r"^t(\d+)_[nva]\d+$")


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_records: int = 200
    n: int = 5
    d_v: int = 16
    K: int = 4
    vocab_per_topic: int = 24
    sentence_len_range: Tuple[int, int] = (4, 9)
    separation: float = 10.0
    sigma: float = 1.0
    coherence: float = 0.8
    seed: int = 0

    def __init__(self, **data):
        try:
            super().__init__(**data)
        except ValidationError as exc:
            raise config_error(type(self).__name__, exc) from None

    @model_validator(mode="after")
    def _check(self):
        if self.K < 2:
            raise ValueError(f"synthetic corpus needs K >= 2, got {self.K}")
        if self.d_v < self.K:
            raise ValueError(f"synthetic corpus needs d_v >= K, got d_v={self.d_v}, K={self.K}")
        if self.num_records < 0 or self.n < 1:
            raise ValueError(f"num_records must be >= 0 and n >= 1, got {self.num_records}, {self.n}")
        if self.vocab_per_topic < 4:
            raise ValueError(f"vocab_per_topic must be >= 4, got {self.vocab_per_topic}")
        low, high = self.sentence_len_range
        if not any(low <= len(t) <= high for t in TEMPLATES):
            raise ValueError(f"no sentence template has a length in {self.sentence_len_range}")
        if self.sigma <= 0 or self.separation <= 0:
            raise ValueError("sigma and separation must be positive")
        if not 0.0 <= self.coherence <= 1.0:
            raise ValueError(f"coherence must lie in [0, 1], got {self.coherence}")
        return self


def topic_of_word(token: str) -> Optional[int]:
    """Topic owning a content word, None for function and reserved words"""
    match = _CONTENT.match(token)
    return int(match.group(1)) if match else None


def topic_words(cfg: SynthConfig, k: int) -> dict:
    per = cfg.vocab_per_topic
    verbs = adjectives = per // 4
    nouns = per - verbs - adjectives
    return {
        "N": [f"t{k}_n{i}" for i in range(nouns)],
        "V": [f"t{k}_v{i}" for i in range(verbs)],
        "A": [f"t{k}_a{i}" for i in range(adjectives)],
    }


def synthetic_vocab(cfg: SynthConfig) -> Vocab:
    words = list(FUNCTION_WORDS)
    for k in range(cfg.K):
        slots = topic_words(cfg, k)
        words += slots["N"] + slots["V"] + slots["A"]
    return Vocab(list(RESERVED) + words)


def blob_centers(cfg: SynthConfig) -> np.ndarray:
    centers = np.zeros((cfg.K, cfg.d_v))
    centers[np.arange(cfg.K), np.arange(cfg.K)] = cfg.separation * cfg.sigma / np.sqrt(2.0)
    return centers


def _topic_sequence(cfg: SynthConfig, rng: SeededRng) -> List[int]:
    topics = [int(rng.integers(0, cfg.K))]
    for _ in range(cfg.n - 1):
        if rng.random() < cfg.coherence:
            topics.append((topics[-1] + 1) % cfg.K)
        else:
            topics.append(int(rng.integers(0, cfg.K)))
    return topics


def _sentence(templates, words: dict, rng: SeededRng) -> str:
    template = templates[int(rng.integers(0, len(templates)))]
    out = []
    for symbol in template:
        if symbol in words:
            choices = words[symbol]
            out.append(choices[int(rng.integers(0, len(choices)))])
        else:
            out.append(symbol)
    return " ".join(out)


def synthesize_corpus(cfg: SynthConfig, split: str = "train") -> Corpus:
    """
    Generate a corpus split; a pure function of (cfg, split).

    Centres and vocabulary depend on cfg only, so every split shares them;
    records come from a split-specific child stream of cfg.seed.
    """
    if split not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}, got {split!r}")
    vocab = synthetic_vocab(cfg)
    centers = blob_centers(cfg)
    low, high = cfg.sentence_len_range
    templates = [t for t in TEMPLATES if low <= len(t) <= high]
    words = [topic_words(cfg, k) for k in range(cfg.K)]
    rng = SeededRng(cfg.seed).child(SPLITS.index(split))

    records = []
    for _ in range(cfg.num_records):
        topics = _topic_sequence(cfg, rng)
        features = centers[topics] + rng.normal(0.0, cfg.sigma, (cfg.n, cfg.d_v))
        sentences = [vocab.encode_sentence(_sentence(templates, words[k], rng)) for k in topics]
        records.append(StoryRecord(features=features, sentences=sentences, golden_topics=topics))

    logger.info(f"Synthesized {cfg.num_records} {split} records (K={cfg.K}, n={cfg.n}, vocab={len(vocab)})")
    return Corpus(records, vocab, split)
