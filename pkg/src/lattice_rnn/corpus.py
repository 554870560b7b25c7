"""Character corpora: vocabulary, 90/5/5 splits, fraction subsets, stream batching."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

FIXTURES = {
    "shakespeare": "shakespeare_500k.txt",
    "pangram": "pangram_2k.txt",
}


class CorpusError(ValueError):
    """Corpus is empty, badly encoded, or too small for the request."""


@dataclass(frozen=True)
class Vocab:
    """Bijection between symbols and dense ids, in first-appearance order.

    Symbols are Unicode characters, or ``chr(byte)`` in bytes mode.
    """

    symbols: tuple[str, ...]
    bytes_mode: bool = False

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise CorpusError("vocabulary symbols must be unique")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> np.ndarray:
        index = self._index  # type: ignore[attr-defined]
        try:
            return np.fromiter((index[c] for c in text), dtype=np.int64, count=len(text))
        except KeyError as exc:
            raise CorpusError(f"symbol {exc.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.symbols[int(i)] for i in ids)

    def encode_bytes(self, data: bytes) -> np.ndarray:
        return self.encode(_as_text(data, self.bytes_mode))

    def decode_bytes(self, ids: Sequence[int]) -> bytes:
        text = self.decode(ids)
        return text.encode("latin-1") if self.bytes_mode else text.encode("utf-8")


def _as_text(data: bytes, bytes_mode: bool) -> str:
    if bytes_mode:
        return data.decode("latin-1")
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"input is not valid UTF-8 (byte offset {exc.start}); use bytes mode") from None


def build_vocab_encode(data: bytes | str, bytes_mode: bool = False) -> tuple[Vocab, np.ndarray]:
    """Build the vocabulary over the whole text and encode it."""
    text = data if isinstance(data, str) else _as_text(bytes(data), bytes_mode)
    if not text:
        raise CorpusError("empty text")
    vocab = Vocab(tuple(dict.fromkeys(text)), bytes_mode)
    return vocab, vocab.encode(text)


@dataclass(frozen=True)
class SplitCorpus:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    source: str = ""
    fraction: float = 1.0


MIN_SPLIT_LENGTH = 20


def split_90_5_5(ids: np.ndarray, source: str = "") -> SplitCorpus:
    """Prefix split at ``floor(0.90 N)`` and ``floor(0.95 N)``."""
    ids = np.asarray(ids, dtype=np.int64)
    n = len(ids)
    if n < MIN_SPLIT_LENGTH:
        raise CorpusError(f"need at least {MIN_SPLIT_LENGTH} symbols to split, got {n}")
    # integer arithmetic keeps the boundaries exact
    a, b = (90 * n) // 100, (95 * n) // 100
    return SplitCorpus(ids[:a], ids[a:b], ids[b:], source, 1.0)


def subset_fraction(sc: SplitCorpus, p: float) -> SplitCorpus:
    """Keep the first ``floor(p * |train|)`` training symbols; valid/test untouched."""
    if not 0.0 < p <= 1.0:
        raise CorpusError(f"fraction must lie in (0, 1], got {p}")
    keep = math.floor(p * len(sc.train) + 1e-9)
    return replace(sc, train=sc.train[:keep], fraction=p)


def count_windows(n: int, batch: int, bptt: int) -> int:
    streams_len = n // batch
    return max(streams_len - 1, 0) // bptt


def stream_windows(ids: np.ndarray, batch: int, bptt: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(inputs, targets)`` windows, each ``bptt x batch``.

    The ids are cut into ``batch`` contiguous streams of length
    ``S = len(ids) // batch``; window ``w`` covers stream positions
    ``[w*bptt, (w+1)*bptt)`` and its targets are the next symbols of the same
    stream.  The trailing partial window is dropped.
    """
    return iter(StreamBatcher(ids, batch, bptt))


@dataclass
class StreamBatcher:
    ids: np.ndarray
    batch: int
    bptt: int

    def __post_init__(self):
        if self.batch < 1 or self.bptt < 1:
            raise CorpusError("batch and bptt must be >= 1")
        n = len(self.ids)
        if self.n_windows == 0:
            raise CorpusError(
                f"corpus of {n} symbols is too small for batch {self.batch} x bptt {self.bptt} "
                f"(need at least {self.batch * (self.bptt + 1)})"
            )
        S = n // self.batch
        self.streams = np.asarray(self.ids[: S * self.batch], dtype=np.int64).reshape(self.batch, S)

    @property
    def n_windows(self) -> int:
        return count_windows(len(self.ids), self.batch, self.bptt)

    def __len__(self) -> int:
        return self.n_windows

    def __iter__(self):
        K = self.bptt
        for w in range(self.n_windows):
            p = w * K
            yield (
                np.ascontiguousarray(self.streams[:, p : p + K].T),
                np.ascontiguousarray(self.streams[:, p + 1 : p + K + 1].T),
            )


def read_text(path: str | Path, bytes_mode: bool = False) -> tuple[Vocab, np.ndarray]:
    return build_vocab_encode(Path(path).read_bytes(), bytes_mode)


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture (``"shakespeare"`` or ``"pangram"``)."""
    return Path(str(resources.files("lattice_rnn") / "data" / FIXTURES[name]))


def load_corpus(path: str | Path, bytes_mode: bool = False) -> tuple[Vocab, SplitCorpus]:
    vocab, ids = read_text(path, bytes_mode)
    return vocab, split_90_5_5(ids, source=Path(path).name)
