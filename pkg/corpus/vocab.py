"""
Token <-> id bijection with four reserved ids.
"""
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

from diffcore.errors import SchemaError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocab:
    """Lowercased whitespace vocabulary; ids 0..3 are PAD, BOS, EOS, UNK"""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise SchemaError(f"vocab must start with {list(RESERVED)}, got {tokens[:4]}")
        index: Dict[str, int] = {}
        for i, token in enumerate(tokens):
            if not token or token != token.strip() or " " in token:
                raise SchemaError(f"vocab entry {i} is not a single token: {token!r}")
            if token in index:
                raise SchemaError(f"vocab token {token!r} appears at ids {index[token]} and {i}")
            index[token] = i
        self._tokens = tokens
        self._index = index

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Vocab":
        """Vocab over every lowercased whitespace token seen at least min_count times, sorted"""
        counts = Counter(word for text in texts for word in text.lower().split())
        words = sorted(w for w, c in counts.items() if c >= min_count and w not in RESERVED)
        return cls(list(RESERVED) + words)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def tokens(self) -> List[str]:
        return list(self._tokens)

    def id(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token(self, token_id: int) -> str:
        return self._tokens[token_id]

    def tokenize(self, text: str) -> List[int]:
        return [self.id(word) for word in text.lower().split()]

    def detokenize(self, ids: Iterable[int]) -> str:
        return " ".join(self._tokens[int(i)] for i in ids)

    def encode_sentence(self, text: str) -> List[int]:
        """Token ids of a reference sentence, EOS-terminated"""
        return self.tokenize(text) + [EOS]

    def decode_sentence(self, ids: Iterable[int]) -> str:
        """Surface text up to (excluding) the first EOS; PAD and BOS dropped"""
        words = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            words.append(self._tokens[i])
        return " ".join(words)

    def save(self, path: Union[str, Path]):
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([line.strip() for line in lines if line.strip()])

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._tokens == other._tokens

    def __repr__(self):
        return f"Vocab(size={len(self)})"
