"""Character-level tokenization and canonical text forms for coordinates and pixels."""

from __future__ import annotations

import math
import re
from pathlib import Path
from typing import Iterable, Sequence

from .geo import GeoPoint, PixelCoord

PAD, BOS, EOS, SEP = "<pad>", "<bos>", "<eos>", "<sep>"
SPECIALS = (PAD, BOS, EOS, SEP)
PAD_ID, BOS_ID, EOS_ID, SEP_ID = 0, 1, 2, 3
DEFAULT_MAX_VOCAB = 512


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"vocabulary must start with the specials {SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate token in vocabulary")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        if not text.endswith("\n"):
            raise ValueError(f"{path}: vocabulary file must end with a newline")
        return cls(text[:-1].split("\n"))


def build_vocab(corpus: Iterable[str], max_size: int = DEFAULT_MAX_VOCAB) -> Vocabulary:
    """Specials, then every distinct character in order of first appearance."""
    tokens = list(SPECIALS)
    seen: set[str] = set()
    empty = True
    for text in corpus:
        empty = False
        for ch in text:
            if ch in seen:
                continue
            if ch == "\n" or ch == "\r":
                raise ValueError("line breaks cannot be vocabulary tokens")
            seen.add(ch)
            tokens.append(ch)
            if len(tokens) > max_size:
                raise ValueError(f"corpus needs more than max_size={max_size} tokens")
    if empty:
        raise ValueError("empty corpus")
    return Vocabulary(tokens)


def encode(vocab: Vocabulary, text: str) -> list[int]:
    ids = []
    for offset, ch in enumerate(text):
        i = vocab.index.get(ch)
        if i is None or i < len(SPECIALS):
            raise ValueError(f"unknown character {ch!r} at offset {offset}")
        ids.append(i)
    return ids


def decode(vocab: Vocabulary, ids: Iterable[int]) -> str:
    out = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise ValueError(f"token id {i} outside vocabulary of size {len(vocab)}")
        if i >= len(SPECIALS):
            out.append(vocab.tokens[i])
    return "".join(out)


_COORD_RE = re.compile(r"^(-?\d{1,3}\.\d{6}),(-?\d{1,2}\.\d{6})$")
_PIXEL_RE = re.compile(r"^x=(\d{1,4}),y=(\d{1,4})$")


def format_coord(p: GeoPoint) -> str:
    return f"{p.lng:.6f},{p.lat:.6f}"


def parse_coord(text: str) -> GeoPoint:
    m = _COORD_RE.match(text.strip())
    if m is None:
        raise ValueError(f"malformed coordinate text: {text!r}")
    return GeoPoint(float(m.group(1)), float(m.group(2)))


def _half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def format_pixel(px: PixelCoord) -> str:
    x, y = _half_up(px.x), _half_up(px.y)
    if not (0 <= x <= 9999 and 0 <= y <= 9999):
        raise ValueError(f"pixel ({px.x}, {px.y}) outside the 0..9999 text range")
    return f"x={x},y={y}"


def parse_pixel(text: str) -> PixelCoord:
    m = _PIXEL_RE.match(text.strip())
    if m is None:
        raise ValueError(f"malformed pixel text: {text!r}")
    return PixelCoord(float(m.group(1)), float(m.group(2)))
