"""
JSON-lines corpus files.

One object per line: `features` (n arrays of d_v numbers), `sentences`
(n strings) and optional `topics` (n integers). The vocabulary lives in a
separate text file, one token per line, line number = id.
"""
import json
import logging
from pathlib import Path
from typing import Optional, Union

from corpus.records import Corpus, StoryRecord
from corpus.vocab import UNK, Vocab
from diffcore.errors import CorpusParseError, SchemaError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _parse_line(line: str, line_number: int, vocab: Vocab):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise CorpusParseError(f"invalid JSON ({e.msg})", line_number)
    if not isinstance(obj, dict):
        raise CorpusParseError("record must be a JSON object", line_number)
    missing = {"features", "sentences"} - obj.keys()
    if missing:
        raise CorpusParseError(f"record is missing keys {sorted(missing)}", line_number)
    unknown = obj.keys() - {"features", "sentences", "topics"}
    if unknown:
        raise CorpusParseError(f"record has unknown keys {sorted(unknown)}", line_number)

    features = obj["features"]
    sentences = obj["sentences"]
    topics = obj.get("topics")
    if not isinstance(features, list) or not all(
        isinstance(row, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row)
        for row in features
    ):
        raise CorpusParseError("features must be an array of numeric arrays", line_number)
    if not isinstance(sentences, list) or not all(isinstance(s, str) for s in sentences):
        raise CorpusParseError("sentences must be an array of strings", line_number)
    if topics is not None and (
        not isinstance(topics, list) or not all(isinstance(k, int) and not isinstance(k, bool) for k in topics)
    ):
        raise CorpusParseError("topics must be an array of integers", line_number)

    if len({len(row) for row in features}) > 1:
        raise SchemaError(f"line {line_number}: feature vectors have differing dimensions")
    encoded = [vocab.encode_sentence(s) for s in sentences]
    unk = sum(token == UNK for sentence in encoded for token in sentence)
    record = StoryRecord(features=features, sentences=encoded, golden_topics=topics)
    try:
        record.validate(len(vocab))
    except SchemaError as e:
        raise SchemaError(f"line {line_number}: {e}")
    return record, unk


def load_corpus(path: PathLike, vocab: Union[Vocab, PathLike], split: str = "train") -> Corpus:
    """
    Read and validate a corpus file.

    Args:
        path: JSON-lines corpus file
        vocab: Vocab instance or path to a vocab file
        split: train, valid or test

    Returns:
        Corpus: validated records; out-of-vocabulary words become UNK
    """
    if not isinstance(vocab, Vocab):
        vocab = Vocab.load(vocab)
    records, unk_count = [], 0
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            record, unk = _parse_line(line, line_number, vocab)
            if records and record.features.shape != records[0].features.shape:
                raise SchemaError(
                    f"line {line_number}: record shape {record.features.shape} differs from {records[0].features.shape}"
                )
            records.append(record)
            unk_count += unk
    corpus = Corpus(records, vocab, split, unk_count=unk_count)
    logger.info(f"Loaded {len(records)} {split} records from {path} ({unk_count} UNK substitutions)")
    return corpus


def save_corpus(corpus: Corpus, path: PathLike, vocab_path: Optional[PathLike] = None):
    """Write records as JSON-lines (sentences detokenized without EOS), optionally the vocab alongside"""
    with open(path, "w", encoding="utf-8") as handle:
        for record in corpus.records:
            obj = {
                "features": record.features.tolist(),
                "sentences": [corpus.vocab.decode_sentence(s) for s in record.sentences],
            }
            if record.golden_topics is not None:
                obj["topics"] = list(record.golden_topics)
            handle.write(json.dumps(obj) + "\n")
    if vocab_path is not None:
        corpus.vocab.save(vocab_path)
    logger.info(f"Saved {len(corpus)} {corpus.split} records to {path}")
