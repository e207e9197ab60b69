"""Story corpora: vocabulary, records, JSON-lines I/O and the synthetic generator."""
from corpus.vocab import Vocab, PAD, BOS, EOS, UNK
from corpus.records import Corpus, StoryRecord, mean_pool
from corpus.corpus_io import load_corpus, save_corpus
from corpus.synthetic import SynthConfig, synthesize_corpus
