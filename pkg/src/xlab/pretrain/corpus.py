"""Bracketed PCFG corpus standing in for natural-language pretraining text.

A grammar maps nonterminals to weighted productions. Productions containing
an opening bracket symbol nest one level deeper; once ``max_depth`` is
reached those productions are dropped and the remaining weights
renormalized. Derivations deeper than ``derivation_cap`` mean the grammar
does not terminate and raise :class:`CorpusError`.
"""
from __future__ import annotations

import bisect
import itertools
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..vocab import (BRACKETS, CLASSES, DIGITS, LISTOPS_CLOSE, LISTOPS_OPS, PIXELS, PROTEIN_ALPHABET,
                     VOCAB, Vocab)

Production = tuple[float, tuple[str, ...]]


class CorpusError(ValueError):
    pass


def _uniform(symbols) -> list[Production]:
    return [(1.0, (s,)) for s in symbols]


def default_rules(vocab: Vocab = VOCAB) -> dict[str, list[Production]]:
    """Default grammar; the weights give every corpus symbol >= 0.1% of tokens.

    Nonterminals carry a ``$`` prefix so they never collide with vocabulary
    symbols (the protein letter ``S`` for instance).
    """
    return {
        "$S": [(1.0, ("$ITEMS",))],
        "$ITEMS": [(0.8, ("$ITEM", "$ITEMS")), (0.2, ("$ITEM",))],
        "$ITEM": [
            (0.24, ("$PHRASE",)),
            (0.19, ("$PIXRUN",)),
            (0.07, ("$NUMS",)),
            (0.06, ("$PROT",)),
            (0.10, ("$LABEL",)),
            (0.10, ("(", "$ITEMS", ")")),
        ] + [(0.07 / len(LISTOPS_OPS), (op, "$ARGS", LISTOPS_CLOSE)) for op in LISTOPS_OPS],
        "$PHRASE": [(0.5, ("$WORD", "$WORD")), (0.3, ("$WORD",)), (0.2, ("$WORD", "$WORD", "$WORD"))],
        "$ARGS": [(0.45, ("$ARG", "$ARGS")), (0.55, ("$ARG",))],
        "$ARG": [(0.6, ("$DIGIT",)), (0.4, ("$WORD",))],
        "$NUMS": [(0.5, ("$DIGIT", "$NUMS")), (0.5, ("$DIGIT",))],
        "$PIXRUN": [(1.0, ("$PIX", "$PIX", "$PIX", "$PIX"))],
        "$PROT": [(1.0, ("$LET", "$LET", "$LET", "$LET"))],
        "$LABEL": [(1.0, ("$CLS", "$WORD"))],
        "$WORD": _uniform(vocab.words),
        "$DIGIT": _uniform(DIGITS),
        "$PIX": _uniform(PIXELS),
        "$LET": _uniform(PROTEIN_ALPHABET),
        "$CLS": _uniform(CLASSES),
    }


@dataclass(frozen=True)
class CorpusSpec:
    rules: dict = field(default_factory=default_rules)
    start: str = "$S"
    open_symbols: frozenset = frozenset({BRACKETS[0], *LISTOPS_OPS})
    max_depth: int = 3
    length_range: tuple[int, int] = (16, 64)
    n_sequences: int = 20000
    seed: int = 0
    derivation_cap: int = 512
    max_tries: int = 200

    def __hash__(self):
        return hash((self.start, self.max_depth, self.length_range, self.n_sequences, self.seed))

    def terminals(self) -> set[str]:
        out = set()
        for prods in self.rules.values():
            for _, rhs in prods:
                out.update(s for s in rhs if s not in self.rules)
        return out


def _choose(prods: list[Production], cum: list[float], rng: np.random.Generator) -> tuple[str, ...]:
    i = bisect.bisect_right(cum, rng.random() * cum[-1])
    return prods[min(i, len(prods) - 1)][1]


def _derive(spec: CorpusSpec, rng: np.random.Generator, budget: int) -> list[str] | None:
    """One derivation; None if it grows past ``budget`` symbols."""
    out: list[str] = []
    # (symbol, bracket depth, derivation depth)
    stack = [(spec.start, 0, 0)]
    allowed_cache: dict[tuple[str, bool], tuple[list[Production], list[float]]] = {}
    while stack:
        sym, depth, ddepth = stack.pop()
        prods = spec.rules.get(sym)
        if prods is None:
            out.append(sym)
            if len(out) > budget:
                return None
            continue
        if ddepth > spec.derivation_cap:
            raise CorpusError(f"derivation deeper than {spec.derivation_cap}: grammar does not terminate")
        at_cap = depth >= spec.max_depth
        key = (sym, at_cap)
        cached = allowed_cache.get(key)
        if cached is None:
            allowed = [p for p in prods if not (at_cap and spec.open_symbols.intersection(p[1]))]
            if not allowed:
                raise CorpusError(f"nonterminal {sym!r} has no production allowed at depth {depth}")
            cached = allowed_cache[key] = (allowed, list(itertools.accumulate(p[0] for p in allowed)))
        rhs = _choose(cached[0], cached[1], rng)
        child_depth = depth + 1 if spec.open_symbols.intersection(rhs) else depth
        for s in reversed(rhs):
            stack.append((s, child_depth, ddepth + 1))
    return out


def gen_sequence(spec: CorpusSpec, index: int) -> list[str]:
    rng = np.random.default_rng([spec.seed, index])
    lo, hi = spec.length_range
    for _ in range(spec.max_tries):
        syms = _derive(spec, rng, hi)
        if syms is not None and lo <= len(syms) <= hi:
            return syms
    raise CorpusError(f"no sequence with length in {spec.length_range} after {spec.max_tries} tries")


def gen_corpus(spec: CorpusSpec, vocab: Vocab = VOCAB) -> list[list[int]]:
    """Token-id sequences; sequence ``i`` depends only on (seed, i)."""
    clash = [k for k in spec.rules if k in vocab.index]
    if clash:
        raise CorpusError(f"nonterminal names collide with vocabulary symbols: {sorted(clash)[:5]}")
    unknown = [s for s in spec.terminals() if s not in vocab.index]
    if unknown:
        raise CorpusError(f"grammar emits symbols outside the vocabulary: {sorted(unknown)[:5]}")
    if vocab.sentinel_ids & {vocab.id(s) for s in spec.terminals()} or {"<mask>", "<pad>"} & spec.terminals():
        raise CorpusError("grammar emits sentinel or special tokens")
    return [vocab.encode(gen_sequence(spec, i)) for i in range(spec.n_sequences)]


def bracket_depth(symbols, open_symbols) -> int:
    depth = best = 0
    for s in symbols:
        if s in open_symbols:
            depth += 1
            best = max(best, depth)
        elif s in (BRACKETS[1], LISTOPS_CLOSE):
            depth -= 1
    return best


def vocabulary_coverage(corpus: list[list[int]], required_ids) -> dict[int, float]:
    """Fraction of corpus tokens equal to each required id."""
    counts = Counter(t for seq in corpus for t in seq)
    total = sum(counts.values())
    return {i: counts.get(i, 0) / total for i in required_ids}


def save_corpus(corpus, path) -> None:
    Path(path).write_text("".join(" ".join(map(str, seq)) + "\n" for seq in corpus), encoding="utf-8")


def load_corpus(path) -> list[list[int]]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append([int(t) for t in line.split()])
        except ValueError:
            raise CorpusError(f"line {n}: non-integer token") from None
    return out
