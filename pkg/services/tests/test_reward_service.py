import itertools
import math
from functools import lru_cache

import numpy as np
import pytest

from corpus.synthetic import SynthConfig, synthesize_corpus
from corpus.vocab import EOS, PAD
from diffcore.errors import AlignmentError, ConfigError
from services.reward_service import (
    DocFreqTable,
    RewardService,
    bleu4,
    cider_d,
    create_reward_service,
    distinct_n,
    repetition_rate,
    rouge_l,
    sentence_bleu4,
    sentence_rewards,
)

ALPHABET = (4, 5, 6)
SEQUENCES = [list(s) for length in range(1, 5) for s in itertools.product(ALPHABET, repeat=length)]
DOCUMENTS = [[4, 5, 6], [4, 4], [5, 6, 6, 4], [6]]


# ----------------------------------------------------------------------
# Brute-force oracles
# ----------------------------------------------------------------------

def _count(seq, gram):
    n = len(gram)
    return sum(1 for i in range(len(seq) - n + 1) if tuple(seq[i:i + n]) == gram)


def _oracle_cider(cand, ref, documents):
    N = len(documents)
    orders = min(4, len(ref))
    total = 0.0
    for n in range(1, orders + 1):
        grams = list(itertools.product(ALPHABET, repeat=n))
        df = np.array([sum(1 for d in documents if _count(d, g) > 0) for g in grams], dtype=float)
        idf = math.log(N) - np.log(np.maximum(1.0, df))
        vc = np.array([_count(cand, g) for g in grams], dtype=float) * idf
        vr = np.array([_count(ref, g) for g in grams], dtype=float) * idf
        num = float(np.sum(np.minimum(vc, vr) * vr))
        nc, nr = np.linalg.norm(vc), np.linalg.norm(vr)
        if nc != 0 and nr != 0:
            num /= nc * nr
        total += num * math.exp(-((len(cand) - len(ref)) ** 2) / 72.0)
    return 10.0 * total / orders


def _oracle_bleu(cand, ref):
    precisions = []
    for n in range(1, 5):
        grams = set(tuple(cand[i:i + n]) for i in range(len(cand) - n + 1))
        matched = sum(min(_count(cand, g), _count(ref, g)) for g in grams)
        possible = max(len(cand) - n + 1, 0)
        if matched == 0:
            return 0.0
        precisions.append(matched / possible)
    bp = 1.0 if len(cand) > len(ref) else math.exp(1 - len(ref) / len(cand))
    return bp * math.exp(sum(math.log(p) for p in precisions) / 4)


def _oracle_rouge(cand, ref):
    @lru_cache(maxsize=None)
    def lcs(i, j):
        if i == len(cand) or j == len(ref):
            return 0
        if cand[i] == ref[j]:
            return 1 + lcs(i + 1, j + 1)
        return max(lcs(i + 1, j), lcs(i, j + 1))

    common = lcs(0, 0)
    if common == 0:
        return 0.0
    p, r = common / len(cand), common / len(ref)
    return (1 + 1.44) * p * r / (r + 1.44 * p)


@pytest.fixture(scope="module")
def df():
    return DocFreqTable.from_sentences(DOCUMENTS)


# ----------------------------------------------------------------------
# CIDEr-D
# ----------------------------------------------------------------------

def test_cider_identity_scores_ten():
    table = DocFreqTable.from_sentences([[4, 5, 6], [7, 8]])
    assert cider_d([4, 5, 6], [[4, 5, 6]], table) == pytest.approx(10.0, abs=1e-9)


def test_cider_disjoint_scores_zero(df):
    assert cider_d([4, 4], [[5, 6]], df) == 0.0


def test_cider_empty_candidate_scores_zero(df):
    assert cider_d([], [[4, 5]], df) == 0.0
    assert cider_d([EOS], [[4, 5]], df) == 0.0


def test_cider_needs_a_reference(df):
    with pytest.raises(ConfigError):
        cider_d([4], [], df)


def test_cider_two_token_pair(df):
    assert cider_d([4, 5], [[5, 4]], df) == pytest.approx(_oracle_cider([4, 5], [5, 4], DOCUMENTS), abs=1e-12)


def test_cider_matches_oracle_exhaustively(df):
    for cand in SEQUENCES:
        for ref in SEQUENCES:
            assert abs(cider_d(cand, [ref], df) - _oracle_cider(cand, ref, DOCUMENTS)) < 1e-9, (cand, ref)


def test_cider_ignores_padding_and_reference_order(df):
    refs = [[4, 5, 6], [6, 6]]
    base = cider_d([4, 5], refs, df)
    assert cider_d([4, 5, EOS, PAD, PAD], refs, df) == base
    assert cider_d([4, 5], refs[::-1], df) == pytest.approx(base, abs=1e-12)


def test_cider_does_not_mutate_inputs(df):
    cand, refs = [4, 5, EOS], [[4, 5, 6]]
    cider_d(cand, refs, df)
    assert cand == [4, 5, EOS] and refs == [[4, 5, 6]]


# ----------------------------------------------------------------------
# BLEU-4
# ----------------------------------------------------------------------

def test_bleu_identity_is_one():
    assert bleu4([[4, 5, 6, 7, 8]], [[[4, 5, 6, 7, 8]]]) == pytest.approx(1.0, abs=1e-12)


def test_bleu_short_candidate_is_zero():
    assert bleu4([[4, 5]], [[[4, 5]]]) == 0.0


def test_bleu_empty_corpus():
    with pytest.raises(ConfigError):
        bleu4([], [])


def test_bleu_misaligned():
    with pytest.raises(AlignmentError):
        bleu4([[4, 5, 6, 7]], [])


def test_bleu_corpus_pools_counts():
    candidates = [[4, 5, 6, 7, 8], [4, 5, 6, 7]]
    references = [[[4, 5, 6, 7, 9]], [[4, 5, 6, 7]]]
    expected = (8 / 9 * 6 / 7 * 4 / 5 * 2 / 3) ** 0.25
    assert bleu4(candidates, references) == pytest.approx(expected, abs=1e-12)


def test_bleu_brevity_penalty():
    assert bleu4([[4, 5, 6, 7]], [[[4, 5, 6, 7, 8, 9]]]) == pytest.approx(math.exp(-0.5), abs=1e-12)


def test_bleu_closest_reference_length_prefers_shorter():
    refs = [[[4, 5, 6, 7, 8], [4, 5, 6]]]
    assert bleu4([[4, 5, 6, 7]], refs) == pytest.approx(1.0, abs=1e-12)


def test_bleu_matches_oracle_exhaustively():
    for cand in SEQUENCES:
        for ref in SEQUENCES:
            assert abs(bleu4([cand], [[ref]]) - _oracle_bleu(cand, ref)) < 1e-9, (cand, ref)


def test_sentence_bleu_smoothing():
    assert sentence_bleu4([4, 5, 6, 7], [[4, 5, 6, 8]]) == pytest.approx(0.2 ** 0.25, abs=1e-12)
    assert sentence_bleu4([4, 5], [[4, 5]]) > 0


# ----------------------------------------------------------------------
# ROUGE-L
# ----------------------------------------------------------------------

def test_rouge_worked_example():
    expected = 2.44 * 0.75 / (1 + 1.44 * 0.75)
    assert rouge_l("a b c d".split(), "a c d".split()) == pytest.approx(expected, abs=1e-12)


def test_rouge_identity_and_disjoint():
    assert rouge_l([4, 5, 6], [[4, 5, 6]]) == pytest.approx(1.0)
    assert rouge_l([4, 4], [[5, 6]]) == 0.0
    assert rouge_l([], [[5, 6]]) == 0.0


def test_rouge_needs_reference():
    with pytest.raises(ConfigError):
        rouge_l([4], [[]])


def test_rouge_matches_oracle_exhaustively():
    for cand in SEQUENCES:
        for ref in SEQUENCES:
            assert abs(rouge_l(cand, [ref]) - _oracle_rouge(cand, ref)) < 1e-9, (cand, ref)


# ----------------------------------------------------------------------
# Sentence rewards and diversity
# ----------------------------------------------------------------------

GOLDEN = [[4, 5, 6], [7, 8], [9, 10, 11]]


@pytest.fixture
def tables():
    sentence_df = DocFreqTable.from_sentences(GOLDEN + [[12, 13]])
    story_df = DocFreqTable.from_sentences([[t for s in GOLDEN for t in s], [12, 13, 14]])
    return sentence_df, story_df


def test_golden_story_scores_ten_everywhere(tables):
    report = sentence_rewards(GOLDEN, GOLDEN, *tables)
    np.testing.assert_allclose(report.sentence_rewards, [10.0] * 3, atol=1e-9)
    assert report.cider_d == pytest.approx(10.0, abs=1e-9)
    assert report.cider_d_sentence_mean == pytest.approx(10.0, abs=1e-9)
    assert report.bleu4 == pytest.approx(1.0)
    assert report.rouge_l == pytest.approx(1.0)


def test_one_perfect_sentence_among_garbage(tables):
    report = sentence_rewards([[4, 5, 6], [12, 12], [13]], GOLDEN, *tables)
    assert report.sentence_rewards[0] == pytest.approx(10.0, abs=1e-9)
    assert report.sentence_rewards[1:] == [0.0, 0.0]


def test_permuted_story_changes_sentence_rewards(tables):
    permuted = [GOLDEN[1], GOLDEN[0], GOLDEN[2]]
    report = sentence_rewards(permuted, GOLDEN, *tables)
    assert report.sentence_rewards[:2] == [0.0, 0.0]
    assert sorted(t for s in permuted for t in s) == sorted(t for s in GOLDEN for t in s)


def test_misaligned_story(tables):
    with pytest.raises(AlignmentError):
        sentence_rewards(GOLDEN[:2], GOLDEN, *tables)


def test_diversity():
    assert distinct_n([[4, 5], [4, 6]], 1) == pytest.approx(0.75)
    assert distinct_n([[4, 5], [4, 6]], 2) == pytest.approx(1.0)
    assert distinct_n([], 1) == 0.0
    assert repetition_rate([[[4, 5], [4, 5], [6]]]) == pytest.approx(1 / 3)
    assert repetition_rate([[[4, 5]], [[4, 5]]]) == 0.0


# ----------------------------------------------------------------------
# Service
# ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def corpus():
    return synthesize_corpus(SynthConfig(num_records=12, seed=2))


def test_doc_freq_levels(corpus):
    assert DocFreqTable.from_corpus(corpus, "sentence").num_docs == 12 * corpus.n
    assert DocFreqTable.from_corpus(corpus, "story").num_docs == 12
    with pytest.raises(ConfigError):
        DocFreqTable.from_corpus(corpus, "paragraph")


def test_batch_rewards_shape_and_identity(corpus):
    service = create_reward_service(corpus)
    references = [[s[:-1] for s in r.sentences] for r in corpus.records[:3]]
    sentences = [[references[b][slot] for b in range(3)] for slot in range(corpus.n)]
    rewards = service.batch_rewards(sentences, references)
    assert rewards.shape == (3, corpus.n)
    assert np.all(rewards >= 0)
    with pytest.raises(AlignmentError):
        service.batch_rewards([s[:2] for s in sentences], references)


def test_evaluate_golden_against_itself(corpus):
    service = create_reward_service(corpus)
    golden = [[s[:-1] for s in r.sentences] for r in corpus.records]
    report = service.evaluate_stories(golden, golden)
    assert report["bleu4"] == pytest.approx(1.0)
    assert report["rouge_l"] == pytest.approx(1.0)
    recomputed = np.mean([
        cider_d(g, [g], service.sentence_df) for story in golden for g in story
    ])
    assert report["cider_d"]["sentence_mean"] == pytest.approx(recomputed, abs=1e-12)
    assert len(report["per_record"]) == len(golden)


def test_evaluate_empty_split(corpus):
    service = create_reward_service(corpus)
    with pytest.raises(ConfigError):
        service.evaluate_stories([], [])


def test_service_keeps_tables():
    table = DocFreqTable.from_sentences([[4]])
    service = RewardService(table, table)
    assert service.sentence_df is table
