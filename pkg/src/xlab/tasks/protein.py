"""Motif-family classification over the 25-letter protein alphabet.

Each class owns a small family of 3-5 letter motifs. A sample is background
letters with one or more of its class's motifs planted at random offsets;
samples never contain a motif of another class, so the label is recoverable
by scanning for motifs.

FASTA-like file format::

    >sample0 class=3
    KSPLTYAEALANTIMNTELPPANR
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..vocab import PROTEIN_ALPHABET, VOCAB
from .dataset import DatasetFormatError, Sample

ALPHABET = "".join(PROTEIN_ALPHABET)
_LETTERS = set(ALPHABET)


class ProteinDataError(ValueError):
    pass


@dataclass(frozen=True)
class ProteinTaskSpec:
    n_classes: int = 20
    motifs_per_class: int = 3
    motif_length: tuple[int, int] = (3, 5)
    length_range: tuple[int, int] = (24, 48)
    motifs_per_sample: tuple[int, int] = (1, 2)
    # per-letter substitution probability inside planted motifs
    noise: float = 0.0
    n_train: int = 4000
    n_val: int = 500
    n_test: int = 500
    seed: int = 0
    max_tries: int = 200

    def __post_init__(self):
        lo, hi = self.motif_length
        if not 1 <= lo <= hi:
            raise ValueError(f"bad motif length range {self.motif_length}")
        if self.length_range[0] < hi * self.motifs_per_sample[1]:
            raise ValueError("length range too short to hold the planted motifs")


def motif_families(spec: ProteinTaskSpec) -> list[tuple[str, ...]]:
    """Deterministic motif families; no motif is a substring of another."""
    rng = np.random.default_rng([spec.seed, 0x5EED])
    chosen: list[str] = []
    families = []
    lo, hi = spec.motif_length
    for _ in range(spec.n_classes):
        fam = []
        while len(fam) < spec.motifs_per_class:
            n = int(rng.integers(lo, hi + 1))
            m = "".join(ALPHABET[i] for i in rng.integers(len(ALPHABET), size=n))
            if any(m in o or o in m for o in chosen):
                continue
            chosen.append(m)
            fam.append(m)
        families.append(tuple(fam))
    return families


def motif_scan_classify(sequence: str, families) -> int:
    """Class whose motifs occur most often (ties go to the lowest class id)."""
    counts = [sum(_count(sequence, m) for m in fam) for fam in families]
    return int(np.argmax(counts))


def _count(seq: str, motif: str) -> int:
    n, start = 0, seq.find(motif)
    while start >= 0:
        n += 1
        start = seq.find(motif, start + 1)
    return n


def protein_synth_sequence(class_id: int, spec: ProteinTaskSpec, rng: np.random.Generator,
                           families=None) -> str:
    if not 0 <= class_id < spec.n_classes:
        raise ValueError(f"class id {class_id} outside [0, {spec.n_classes})")
    families = families if families is not None else motif_families(spec)
    own = families[class_id]
    foreign = [m for c, fam in enumerate(families) if c != class_id for m in fam]
    for _ in range(spec.max_tries):
        length = int(rng.integers(spec.length_range[0], spec.length_range[1] + 1))
        seq = [ALPHABET[i] for i in rng.integers(len(ALPHABET), size=length)]
        k = int(rng.integers(spec.motifs_per_sample[0], spec.motifs_per_sample[1] + 1))
        motifs = [own[int(rng.integers(len(own)))] for _ in range(k)]
        # non-overlapping placement: split the free letters into k+1 gaps
        free = length - sum(len(m) for m in motifs)
        cuts = np.sort(rng.integers(0, free + 1, size=k))
        pos, prev = 0, 0
        for m, c in zip(motifs, cuts):
            pos += int(c) - prev
            prev = int(c)
            letters = list(m)
            if spec.noise > 0:
                for i in range(len(letters)):
                    if rng.random() < spec.noise:
                        letters[i] = ALPHABET[int(rng.integers(len(ALPHABET)))]
            seq[pos:pos + len(m)] = letters
            pos += len(m)
        s = "".join(seq)
        if any(f in s for f in foreign):
            continue
        if spec.noise == 0 and not any(m in s for m in own):  # pragma: no cover - planted by construction
            continue
        return s
    raise ProteinDataError(f"could not draw a clean sample for class {class_id} in {spec.max_tries} tries")


def encode_sequence(seq: str) -> tuple[int, ...]:
    for i, ch in enumerate(seq):
        if ch not in _LETTERS:
            raise ProteinDataError(f"letter {ch!r} at position {i} is outside the 25-letter alphabet")
    return tuple(VOCAB.id(ch) for ch in seq)


def decode_sequence(tokens) -> str:
    return "".join(VOCAB.decode(tokens))


def protein_synth_sample(class_id: int, spec: ProteinTaskSpec, rng: np.random.Generator,
                         families=None, split: str = "train") -> Sample:
    seq = protein_synth_sequence(class_id, spec, rng, families)
    return Sample(encode_sequence(seq), class_id, split)


def save_fasta_like(samples, path) -> None:
    lines = []
    for i, s in enumerate(samples):
        lines.append(f">sample{i} class={s.label}")
        lines.append(decode_sequence(s.tokens))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_fasta_like(path, split: str = "train") -> list[Sample]:
    samples = []
    header = None
    header_line = 0
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith(">"):
                if header is not None:
                    raise DatasetFormatError("header without sequence", header_line)
                label = None
                for field in line[1:].split():
                    if field.startswith("class="):
                        try:
                            label = int(field[len("class="):])
                        except ValueError:
                            raise DatasetFormatError("non-integer class= field", n) from None
                if label is None or label < 0:
                    raise DatasetFormatError("missing class= field", n)
                header, header_line = label, n
            else:
                if header is None:
                    raise DatasetFormatError("sequence line without header", n)
                try:
                    tokens = encode_sequence(line)
                except ProteinDataError as exc:
                    raise ProteinDataError(f"line {n}: {exc}") from None
                samples.append(Sample(tokens, header, split))
                header = None
    if header is not None:
        raise DatasetFormatError("header without sequence", header_line)
    return samples
