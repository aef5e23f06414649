"""Samples and the TSV dataset format.

One sample per line: space-separated decimal token ids, a TAB, the decimal
label, newline. Example line for a Listops sample ``[SUM 9 4 ]`` -> 3::

    50 46 41 51\t3
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable


class DatasetFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class Sample:
    tokens: tuple[int, ...]
    label: int
    split: str = "train"


def dataset_save(samples: Iterable[Sample], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(" ".join(str(t) for t in s.tokens) + "\t" + str(s.label) + "\n")


def dataset_load(path, split: str = "train") -> list[Sample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetFormatError("expected '<tokens>\\t<label>'", n)
            toks, label = parts
            try:
                tokens = tuple(int(t) for t in toks.split(" ")) if toks else ()
                lab = int(label)
            except ValueError:
                raise DatasetFormatError("non-integer token or label", n) from None
            if lab < 0 or any(t < 0 for t in tokens):
                raise DatasetFormatError("negative token or label", n)
            out.append(Sample(tokens, lab, split))
    return out
