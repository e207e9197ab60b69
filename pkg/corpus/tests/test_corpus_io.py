import json
import logging

import pytest

from corpus.corpus_io import load_corpus, save_corpus
from corpus.synthetic import SynthConfig, synthesize_corpus
from corpus.vocab import UNK, Vocab
from diffcore.errors import CorpusParseError, SchemaError


def _write(path, *objects):
    path.write_text("".join(json.dumps(o) + "\n" for o in objects))


def test_one_record_round_trip(tmp_path):
    corpus = synthesize_corpus(SynthConfig(num_records=1, seed=3))
    save_corpus(corpus, tmp_path / "a.jsonl", tmp_path / "vocab.txt")
    loaded = load_corpus(tmp_path / "a.jsonl", tmp_path / "vocab.txt")
    assert loaded.records[0].features.tobytes() == corpus.records[0].features.tobytes()
    assert loaded.records[0].sentences == corpus.records[0].sentences
    assert loaded.records[0].golden_topics == corpus.records[0].golden_topics
    save_corpus(loaded, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_four_features_five_sentences(tmp_path):
    vocab = Vocab.build(["a b"])
    _write(tmp_path / "c.jsonl", {"features": [[0.0, 1.0]] * 4, "sentences": ["a"] * 5})
    with pytest.raises(SchemaError):
        load_corpus(tmp_path / "c.jsonl", vocab)


def test_inconsistent_d_v_across_records(tmp_path):
    vocab = Vocab.build(["a"])
    _write(
        tmp_path / "c.jsonl",
        {"features": [[0.0, 1.0]], "sentences": ["a"]},
        {"features": [[0.0, 1.0, 2.0]], "sentences": ["a"]},
    )
    with pytest.raises(SchemaError):
        load_corpus(tmp_path / "c.jsonl", vocab)


def test_unknown_token_counts_once(tmp_path, caplog):
    vocab = Vocab.build(["a b"])
    _write(tmp_path / "c.jsonl", {"features": [[0.0], [1.0]], "sentences": ["a b", "a zebra"]})
    with caplog.at_level(logging.INFO):
        corpus = load_corpus(tmp_path / "c.jsonl", vocab)
    assert corpus.unk_count == 1
    assert UNK in corpus.records[0].sentences[1]
    assert "1 UNK" in caplog.text


def test_malformed_line_reports_line_number(tmp_path):
    vocab = Vocab.build(["a"])
    (tmp_path / "c.jsonl").write_text(json.dumps({"features": [[0.0]], "sentences": ["a"]}) + "\n{not json\n")
    with pytest.raises(CorpusParseError) as err:
        load_corpus(tmp_path / "c.jsonl", vocab)
    assert err.value.line_number == 2
    assert "line 2" in str(err.value)


def test_missing_key(tmp_path):
    vocab = Vocab.build(["a"])
    _write(tmp_path / "c.jsonl", {"features": [[0.0]]})
    with pytest.raises(CorpusParseError):
        load_corpus(tmp_path / "c.jsonl", vocab)
