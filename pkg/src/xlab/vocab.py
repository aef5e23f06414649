"""The single symbol vocabulary shared by pretraining and all three tasks.

Layout (ids are stable and part of the checkpoint contract)::

    0-4      <pad> <cls> <bos> <eos> <mask>
    5-36     sentinels <s0> .. <s31>            (objective-only, never in corpus)
    37-46    digits 0 .. 9
    47-51    [MAX [MIN [MED [SUM ]
    52-76    25-letter protein alphabet
    77-332   pixel tokens <px0> .. <px255>
    333-364  class tokens <c0> .. <c31>
    365-366  ( )
    367-511  words w0 .. w144
"""
from __future__ import annotations

from functools import cached_property

SPECIALS = ("<pad>", "<cls>", "<bos>", "<eos>", "<mask>")
N_SENTINELS = 32
SENTINELS = tuple(f"<s{i}>" for i in range(N_SENTINELS))
DIGITS = tuple(str(i) for i in range(10))
LISTOPS_OPS = ("[MAX", "[MIN", "[MED", "[SUM")
LISTOPS_CLOSE = "]"
# 20 standard amino acids plus X (unknown), B, Z, O (pyrrolysine), U (selenocysteine)
PROTEIN_ALPHABET = tuple("ACDEFGHIKLMNPQRSTVWYXBZOU")
N_PIXEL_TOKENS = 256
PIXELS = tuple(f"<px{i}>" for i in range(N_PIXEL_TOKENS))
N_CLASS_TOKENS = 32
CLASSES = tuple(f"<c{i}>" for i in range(N_CLASS_TOKENS))
BRACKETS = ("(", ")")
VOCAB_SIZE = 512

ALIASES = {"[SM": "[SUM"}


class VocabError(KeyError):
    pass


class Vocab:
    def __init__(self, size: int = VOCAB_SIZE):
        fixed = (SPECIALS + SENTINELS + DIGITS + LISTOPS_OPS + (LISTOPS_CLOSE,)
                 + PROTEIN_ALPHABET + PIXELS + CLASSES + BRACKETS)
        if size < len(fixed):
            raise ValueError(f"vocabulary needs at least {len(fixed)} entries")
        self.symbols: tuple[str, ...] = fixed + tuple(f"w{i}" for i in range(size - len(fixed)))
        self.index = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def id(self, symbol: str) -> int:
        symbol = ALIASES.get(symbol, symbol)
        try:
            return self.index[symbol]
        except KeyError:
            raise VocabError(f"unknown symbol {symbol!r}") from None

    def encode(self, symbols) -> list[int]:
        return [self.id(s) for s in symbols]

    def decode(self, ids) -> list[str]:
        return [self.symbols[i] for i in ids]

    @property
    def pad(self) -> int:
        return 0

    @property
    def cls(self) -> int:
        return 1

    @property
    def bos(self) -> int:
        return 2

    @property
    def eos(self) -> int:
        return 3

    @property
    def mask(self) -> int:
        return 4

    def sentinel(self, i: int) -> int:
        if not 0 <= i < N_SENTINELS:
            raise VocabError(f"sentinel index {i} out of range")
        return len(SPECIALS) + i

    @cached_property
    def sentinel_ids(self) -> frozenset[int]:
        return frozenset(self.sentinel(i) for i in range(N_SENTINELS))

    def ids_of(self, symbols) -> tuple[int, ...]:
        return tuple(self.id(s) for s in symbols)

    @cached_property
    def words(self) -> tuple[str, ...]:
        return tuple(s for s in self.symbols if s.startswith("w") and s[1:].isdigit())

    @cached_property
    def corpus_symbols(self) -> tuple[str, ...]:
        """Every symbol that may occur in pretraining text (all but specials and sentinels)."""
        return self.symbols[len(SPECIALS) + N_SENTINELS:]


VOCAB = Vocab()
