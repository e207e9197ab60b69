#!/usr/bin/env python3
"""
Reward Service for HSRL story generation
Generation metrics that double as RL rewards: CIDEr-D, BLEU-4, ROUGE-L,
document-frequency tables and diversity diagnostics
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from numbers import Integral
from typing import Dict, Hashable, Iterable, List, Sequence

import numpy as np

from corpus.records import Corpus
from corpus.vocab import BOS, EOS, PAD
from diffcore.errors import AlignmentError, ConfigError, NumericError

logger = logging.getLogger(__name__)

MAX_ORDER = 4
CIDER_SIGMA = 6.0
CIDER_SCALE = 10.0
ROUGE_BETA = 1.2

Tokens = Sequence[Hashable]


def clean(tokens: Tokens) -> List[Hashable]:
    """Drop PAD/BOS/EOS ids; string tokens pass through"""
    out = []
    for t in tokens:
        if isinstance(t, Integral):
            t = int(t)
            if t in (PAD, BOS, EOS):
                continue
        out.append(t)
    return out


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class DocFreqTable:
    """Per-order n-gram document counts over a reference corpus"""
    counts: List[Counter]
    num_docs: int

    @classmethod
    def build(cls, documents: Iterable[Sequence[Tokens]]) -> "DocFreqTable":
        """Each document is a set of references; an n-gram counts once per document"""
        counts = [Counter() for _ in range(MAX_ORDER)]
        num_docs = 0
        for refs in documents:
            num_docs += 1
            for n in range(1, MAX_ORDER + 1):
                seen = set()
                for ref in refs:
                    seen.update(ngrams(clean(ref), n))
                counts[n - 1].update(seen)
        return cls(counts, num_docs)

    @classmethod
    def from_sentences(cls, sentences: Iterable[Tokens]) -> "DocFreqTable":
        return cls.build([s] for s in sentences)

    @classmethod
    def from_corpus(cls, corpus: Corpus, level: str = "sentence") -> "DocFreqTable":
        """sentence: every golden sentence is a document; story: every concatenated story is"""
        if level == "sentence":
            return cls.from_sentences(s for r in corpus.records for s in r.sentences)
        if level == "story":
            return cls.from_sentences([t for s in r.sentences for t in s] for r in corpus.records)
        raise ConfigError(f"document level must be sentence or story, got {level!r}")

    @property
    def ref_len(self) -> float:
        return math.log(float(self.num_docs)) if self.num_docs > 0 else 0.0

    def df(self, gram: tuple) -> float:
        return float(self.counts[len(gram) - 1].get(gram, 0))


def _tfidf(tokens: List[Hashable], df: DocFreqTable):
    vectors, norms = [], []
    for n in range(1, MAX_ORDER + 1):
        vec = {
            gram: tf * (df.ref_len - math.log(max(1.0, df.df(gram))))
            for gram, tf in ngrams(tokens, n).items()
        }
        vectors.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vectors, norms


def cider_d(candidate: Tokens, references: Sequence[Tokens], df: DocFreqTable) -> float:
    """
    CIDEr-D of one candidate against its references.

    Per order: clipped tf-idf cosine times a Gaussian length penalty (sigma 6);
    averaged over orders 1..min(4, |reference|) and over references, scaled by 10.
    An empty candidate scores 0.
    """
    if not references:
        raise ConfigError("cider_d needs at least one reference")
    cand = clean(candidate)
    if not cand:
        return 0.0
    cand_vec, cand_norm = _tfidf(cand, df)
    total = 0.0
    for reference in references:
        ref = clean(reference)
        ref_vec, ref_norm = _tfidf(ref, df)
        delta = float(len(cand) - len(ref))
        penalty = math.exp(-(delta ** 2) / (2 * CIDER_SIGMA ** 2))
        orders = max(1, min(MAX_ORDER, len(ref)))
        score = 0.0
        for n in range(orders):
            val = sum(min(v, ref_vec[n].get(g, 0.0)) * ref_vec[n].get(g, 0.0) for g, v in cand_vec[n].items())
            if cand_norm[n] != 0 and ref_norm[n] != 0:
                val /= cand_norm[n] * ref_norm[n]
            score += val * penalty
        total += score / orders
    return CIDER_SCALE * total / len(references)


def _closest_ref_length(cand_len: int, ref_lens: List[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - cand_len), r))


def _clipped_counts(cand: List[Hashable], refs: List[List[Hashable]], n: int):
    counts = ngrams(cand, n)
    max_ref = Counter()
    for ref in refs:
        for gram, c in ngrams(ref, n).items():
            max_ref[gram] = max(max_ref[gram], c)
    matched = sum(min(c, max_ref[g]) for g, c in counts.items())
    return matched, max(len(cand) - n + 1, 0)


def bleu4(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]]) -> float:
    """Corpus BLEU-4: clipped precisions pooled over the corpus, closest-reference brevity penalty, no smoothing"""
    if not candidates:
        raise ConfigError("bleu4 needs a non-empty corpus")
    if len(candidates) != len(references):
        raise AlignmentError(f"bleu4: {len(candidates)} candidates but {len(references)} reference sets")
    matched = np.zeros(MAX_ORDER)
    possible = np.zeros(MAX_ORDER)
    cand_len = ref_len = 0
    for candidate, refs in zip(candidates, references):
        cand = clean(candidate)
        refs = [clean(r) for r in refs]
        cand_len += len(cand)
        ref_len += _closest_ref_length(len(cand), [len(r) for r in refs])
        for n in range(1, MAX_ORDER + 1):
            m, p = _clipped_counts(cand, refs, n)
            matched[n - 1] += m
            possible[n - 1] += p
    if cand_len == 0 or np.any(matched == 0):
        return 0.0
    log_precision = float(np.mean(np.log(matched / possible)))
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(log_precision)


def sentence_bleu4(candidate: Tokens, references: Sequence[Tokens]) -> float:
    """Sentence BLEU-4 with +1 added to every order's matched and total counts"""
    cand = clean(candidate)
    refs = [clean(r) for r in references]
    if not cand:
        return 0.0
    log_precision = 0.0
    for n in range(1, MAX_ORDER + 1):
        m, p = _clipped_counts(cand, refs, n)
        log_precision += math.log((m + 1.0) / (p + 1.0))
    ref_len = _closest_ref_length(len(cand), [len(r) for r in refs])
    brevity = 1.0 if len(cand) > ref_len else math.exp(1.0 - ref_len / len(cand))
    return brevity * math.exp(log_precision / MAX_ORDER)


def lcs_length(a: Sequence, b: Sequence) -> int:
    table = np.zeros((len(a) + 1, len(b) + 1), dtype=np.int64)
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i, j] = table[i - 1, j - 1] + 1
            else:
                table[i, j] = max(table[i - 1, j], table[i, j - 1])
    return int(table[len(a), len(b)])


def rouge_l(candidate: Tokens, references) -> float:
    """LCS F-measure with beta 1.2; precision and recall are maxima over references"""
    cand = clean(candidate)
    if references and not isinstance(references[0], (list, tuple, np.ndarray)):
        references = [references]
    refs = [clean(r) for r in references]
    if not refs or any(not r for r in refs):
        raise ConfigError("rouge_l needs non-empty references")
    if not cand:
        return 0.0
    precision = max(lcs_length(cand, r) / len(cand) for r in refs)
    recall = max(lcs_length(cand, r) / len(r) for r in refs)
    if precision == 0 or recall == 0:
        return 0.0
    beta2 = ROUGE_BETA ** 2
    return ((1 + beta2) * precision * recall) / (recall + beta2 * precision)


def distinct_n(sentences: Iterable[Tokens], n: int) -> float:
    """Unique n-grams over total n-grams across all sentences"""
    grams = Counter()
    for s in sentences:
        grams.update(ngrams(clean(s), n))
    total = sum(grams.values())
    return len(grams) / total if total else 0.0


def repetition_rate(stories: Iterable[Sequence[Tokens]]) -> float:
    """Fraction of sentences identical to an earlier sentence of the same story"""
    repeated = total = 0
    for story in stories:
        seen = set()
        for sentence in story:
            key = tuple(clean(sentence))
            total += 1
            if key in seen:
                repeated += 1
            seen.add(key)
    return repeated / total if total else 0.0


def _concat(story: Sequence[Tokens]) -> List[Hashable]:
    return [t for s in story for t in clean(s)]


@dataclass
class RewardReport:
    """Per-sentence rewards and story-level metric values"""
    sentence_rewards: List[float]
    cider_d: float
    cider_d_sentence_mean: float
    bleu4: float
    rouge_l: float
    metadata: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        values = list(self.sentence_rewards) + [self.cider_d, self.cider_d_sentence_mean, self.bleu4, self.rouge_l]
        if not all(math.isfinite(v) and v >= 0 for v in values):
            raise NumericError(f"reward report holds negative or non-finite values: {values}")


def sentence_rewards(
    generated: Sequence[Tokens],
    golden: Sequence[Tokens],
    df: DocFreqTable,
    story_df: DocFreqTable = None,
) -> RewardReport:
    """
    Sentence-level credit assignment for one story.

    Args:
        generated: n generated sentences
        golden: n golden sentences, aligned slot by slot
        df: sentence-level document frequencies
        story_df: story-level document frequencies (defaults to df)

    Returns:
        RewardReport: r_ℓ per slot plus story-level metrics on the concatenated story
    """
    if len(generated) != len(golden):
        raise AlignmentError(f"{len(generated)} generated sentences for {len(golden)} golden sentences")
    rewards = [cider_d(g, [r], df) for g, r in zip(generated, golden)]
    story, reference = _concat(generated), _concat(golden)
    return RewardReport(
        sentence_rewards=rewards,
        cider_d=cider_d(story, [reference], story_df or df),
        cider_d_sentence_mean=float(np.mean(rewards)) if rewards else 0.0,
        bleu4=bleu4([story], [[reference]]),
        rouge_l=rouge_l(story, [reference]) if reference else 0.0,
    )


class RewardService:
    """
    CIDEr-D rewards and story evaluation against a fixed training reference corpus.
    """

    def __init__(self, sentence_df: DocFreqTable, story_df: DocFreqTable):
        """
        Initialize the reward service.

        Args:
            sentence_df: one document per training golden sentence
            story_df: one document per training story
        """
        self.sentence_df = sentence_df
        self.story_df = story_df

    def batch_rewards(self, sentences: Sequence[Sequence[Tokens]], references: Sequence[Sequence[Tokens]]) -> np.ndarray:
        """
        Per-slot CIDEr-D for a batch of stories.

        Args:
            sentences: [n][B] generated sentences (slot-major, as decoded)
            references: [B][n] golden sentences

        Returns:
            np.ndarray: (B, n) rewards
        """
        n, B = len(sentences), len(references)
        rewards = np.zeros((B, n))
        for slot in range(n):
            if len(sentences[slot]) != B:
                raise AlignmentError(f"slot {slot}: {len(sentences[slot])} sentences for {B} stories")
            for b in range(B):
                rewards[b, slot] = cider_d(sentences[slot][b], [references[b][slot]], self.sentence_df)
        if not np.all(np.isfinite(rewards)):
            raise NumericError("non-finite CIDEr-D reward")
        return rewards

    def story_rewards(self, sentences: Sequence[Sequence[Tokens]], references: Sequence[Sequence[Tokens]]) -> np.ndarray:
        """(B,) story-level CIDEr-D of the concatenated stories"""
        B = len(references)
        stories = [[sentences[slot][b] for slot in range(len(sentences))] for b in range(B)]
        return np.array([
            cider_d(_concat(stories[b]), [_concat(references[b])], self.story_df) for b in range(B)
        ])

    def evaluate_stories(self, generated: Sequence[Sequence[Tokens]], golden: Sequence[Sequence[Tokens]]) -> Dict[str, object]:
        """
        Split-level metrics.

        Args:
            generated: [R][n] generated stories
            golden: [R][n] golden stories

        Returns:
            dict: corpus metrics on concatenated stories, per-sentence means, diversity and per-record rewards
        """
        if not generated:
            raise ConfigError("cannot evaluate an empty split")
        if len(generated) != len(golden):
            raise AlignmentError(f"{len(generated)} generated stories for {len(golden)} golden stories")
        reports = [sentence_rewards(g, r, self.sentence_df, self.story_df) for g, r in zip(generated, golden)]
        stories = [_concat(g) for g in generated]
        references = [[_concat(r)] for r in golden]
        flat_generated = [s for story in generated for s in story]
        return {
            "bleu4": bleu4(stories, references),
            "rouge_l": float(np.mean([rouge_l(s, r) if r[0] else 0.0 for s, r in zip(stories, references)])),
            "cider_d": {
                "story_concat": float(np.mean([rep.cider_d for rep in reports])),
                "sentence_mean": float(np.mean([v for rep in reports for v in rep.sentence_rewards])),
            },
            "sentence_bleu4": float(np.mean([
                sentence_bleu4(g, [r]) for story, ref in zip(generated, golden) for g, r in zip(story, ref)
            ])),
            "diversity": {
                "distinct_1": distinct_n(flat_generated, 1),
                "distinct_2": distinct_n(flat_generated, 2),
                "repetition_rate": repetition_rate(generated),
            },
            "per_record": [rep.sentence_rewards for rep in reports],
        }


def create_reward_service(train: Corpus) -> RewardService:
    """Factory: document frequencies from the training split's golden references"""
    service = RewardService(DocFreqTable.from_corpus(train, "sentence"), DocFreqTable.from_corpus(train, "story"))
    logger.info(
        f"Reward service ready: {service.sentence_df.num_docs} sentence documents, "
        f"{service.story_df.num_docs} story documents"
    )
    return service
