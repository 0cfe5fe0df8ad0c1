"""Corpus-derived vocabulary and prompt encoding.

Tokens are maximal alphabetic runs, single digits, or single symbol
characters; digits are split per character so unseen numeric values never
hit [UNK].  Encodings are padded to a fixed length with the mask marking
real tokens; oversize prompts are truncated from the middle of the I/Q
preview so the SNR clause and the answer cue always survive.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

PAD, UNK, CLS, SEP, EOS = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[EOS]")

# digits, sign, point and template punctuation are guaranteed in-vocabulary
SEED_TOKENS = tuple("0123456789") + ("-", ".", ",", "(", ")", "[", "]", ":", "/")

_TOKEN_RE = re.compile(r"[A-Za-z]+|[0-9]|[^\sA-Za-z0-9]")


class TokenizerError(ValueError):
    pass


def tokenize(text: str) -> list:
    return _TOKEN_RE.findall(text)


class Vocab:
    """Dense token<->id mapping; ids 0-4 are the special tokens."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[:5] != list(SPECIAL_TOKENS):
            raise TokenizerError("vocab must start with the five special tokens")
        self.id_to_token = tokens
        self.token_to_id = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(tokens):
            raise TokenizerError("duplicate token in vocab")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def sha256(self) -> str:
        import hashlib

        return hashlib.sha256("\n".join(self.id_to_token).encode()).hexdigest()

    def save(self, path: str) -> None:
        from .dataset import atomic_write

        atomic_write(path, json.dumps({"tokens": self.id_to_token}, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh)["tokens"])


def build_vocab(corpus) -> Vocab:
    """Specials, then corpus tokens in first-seen order."""
    corpus = list(corpus)
    if not corpus:
        raise TokenizerError("empty corpus")
    tokens = list(SPECIAL_TOKENS)
    seen = set(tokens)
    for text in corpus:
        for tok in tokenize(text):
            if tok not in seen:
                tokens.append(tok)
                seen.add(tok)
    return Vocab(tokens)


def build_prompt_vocab(corpus) -> Vocab:
    """Vocabulary for the prompt pipeline: guarantees every digit, the
    sign/point and the template punctuation regardless of which numbers the
    corpus happened to contain, so no rendered prompt can produce [UNK]."""
    return build_vocab([" ".join(SEED_TOKENS)] + list(corpus))


@dataclass(frozen=True)
class TokenSeq:
    ids: np.ndarray  # int64 [max_len]
    attention_mask: np.ndarray  # int64 [max_len], 1 on real tokens
    length: int  # unpadded length


_IQ_OPEN, _IQ_CLOSE = "[", "]"


def _truncate_middle(tokens: list, budget: int) -> list:
    """Drop tokens from the middle of the first [...] span until the
    sequence fits ``budget``; never touches the template suffix."""
    if len(tokens) <= budget:
        return tokens
    try:
        lo = tokens.index(_IQ_OPEN)
        hi = tokens.index(_IQ_CLOSE, lo + 1)
    except ValueError:
        raise TokenizerError("prompt too long") from None
    excess = len(tokens) - budget
    span = hi - lo - 1
    if span < excess:
        raise TokenizerError("prompt too long")
    mid = lo + 1 + (span - excess) // 2
    return tokens[:mid] + tokens[mid + excess:]


def encode(text: str, vocab: Vocab, mode: str = "classifier", max_len: int = 256,
           completion: str | None = None) -> TokenSeq:
    """Encode ``text`` into a padded, masked id sequence.

    classifier mode wraps the tokens in [CLS]...[SEP]; causal mode emits
    the raw tokens, optionally followed by a completion and [EOS].
    """
    if max_len < 4:
        raise TokenizerError("max_len must be >= 4")
    if mode not in ("classifier", "causal"):
        raise TokenizerError(f"unknown mode: {mode!r}")
    tokens = tokenize(text)
    if mode == "classifier":
        overhead = 2
        tail: list = []
    else:
        tail = tokenize(completion) if completion else []
        overhead = len(tail) + 1  # trailing EOS
    tokens = _truncate_middle(tokens, max_len - overhead)

    ids = []
    if mode == "classifier":
        ids.append(CLS)
    ids.extend(vocab.id_of(t) for t in tokens)
    if mode == "classifier":
        ids.append(SEP)
    else:
        ids.extend(vocab.id_of(t) for t in tail)
        ids.append(EOS)
    length = len(ids)
    out = np.full(max_len, PAD, dtype=np.int64)
    out[:length] = ids
    mask = np.zeros(max_len, dtype=np.int64)
    mask[:length] = 1
    return TokenSeq(ids=out, attention_mask=mask, length=length)


_ALPHA_RE = re.compile(r"[A-Za-z]+$")


def decode(ids, vocab: Vocab) -> str:
    """Detokenize: specials dropped, a single space between adjacent
    alphabetic tokens, everything else joined without spaces."""
    parts = []
    prev_alpha = False
    for i in np.asarray(ids).reshape(-1):
        i = int(i)
        if i >= len(vocab):
            raise TokenizerError(f"id out of range: {i}")
        if i in (PAD, UNK, CLS, SEP, EOS):
            continue
        tok = vocab.id_to_token[i]
        alpha = bool(_ALPHA_RE.match(tok))
        if parts and prev_alpha and alpha:
            parts.append(" ")
        parts.append(tok)
        prev_alpha = alpha
    return "".join(parts)
