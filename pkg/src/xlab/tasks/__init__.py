"""The three task families and their dataset builders.

Every task token (digits, Listops operators, pixel tokens, protein letters)
and every label token is an entry of the shared vocabulary, so one
pretrained checkpoint serves all tasks.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..vocab import CLASSES, DIGITS, VOCAB
from .dataset import DatasetFormatError, Sample, dataset_load, dataset_save
from .image import ImageTaskSpec, image_flatten_quantize, synth_image_sample
from .listops import LISTOPS_PRESETS, ListopsSpec, listops_eval, listops_eval_stack, listops_generate
from .protein import ProteinTaskSpec, motif_families, protein_synth_sample

TASKS = ("listops", "image", "protein")
SPLITS = ("train", "val", "test")


@dataclass
class TaskData:
    name: str
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]
    # vocabulary id of each class label, indexed by label
    class_tokens: tuple[int, ...]

    @property
    def n_classes(self) -> int:
        return len(self.class_tokens)

    @property
    def max_len(self) -> int:
        return max(len(s.tokens) for s in self.train + self.val + self.test)

    def split(self, name: str) -> list[Sample]:
        return getattr(self, name)

    def save(self, directory) -> None:
        directory = Path(directory)
        for split in SPLITS:
            dataset_save(self.split(split), directory / f"{split}.tsv")
        (directory / "classes.txt").write_text(" ".join(str(t) for t in self.class_tokens) + "\n")

    @classmethod
    def load(cls, directory, name: str) -> "TaskData":
        directory = Path(directory)
        classes = tuple(int(t) for t in (directory / "classes.txt").read_text().split())
        splits = {s: dataset_load(directory / f"{s}.tsv", s) for s in SPLITS}
        data = cls(name, splits["train"], splits["val"], splits["test"], classes)
        for s in data.train + data.val + data.test:
            if s.label >= len(classes):
                raise DatasetFormatError(f"label {s.label} outside {len(classes)} classes")
        return data


def _split_sizes(spec) -> dict[str, int]:
    return {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}


def _rng(seed: int, split: str, i: int) -> np.random.Generator:
    # one independent stream per sample, so generation is order-free
    return np.random.default_rng([seed, SPLITS.index(split), i])


def build_listops(spec: ListopsSpec) -> TaskData:
    splits = {}
    for split, n in _split_sizes(spec).items():
        out = []
        for i in range(n):
            syms, label = listops_generate(spec, _rng(spec.seed, split, i))
            out.append(Sample(tuple(VOCAB.encode(syms)), label, split))
        splits[split] = out
    return TaskData("listops", splits["train"], splits["val"], splits["test"], VOCAB.ids_of(DIGITS))


def build_image(spec: ImageTaskSpec) -> TaskData:
    splits = {}
    for split, n in _split_sizes(spec).items():
        out = []
        for i in range(n):
            rng = _rng(spec.seed, split, i)
            label = int(rng.integers(spec.n_classes))
            img = synth_image_sample(label, spec, rng)
            out.append(Sample(tuple(image_flatten_quantize(img, spec.levels)), label, split))
        splits[split] = out
    return TaskData("image", splits["train"], splits["val"], splits["test"],
                    VOCAB.ids_of(DIGITS[:spec.n_classes]))


def build_protein(spec: ProteinTaskSpec) -> TaskData:
    families = motif_families(spec)
    splits = {}
    for split, n in _split_sizes(spec).items():
        out = []
        for i in range(n):
            rng = _rng(spec.seed, split, i)
            label = int(rng.integers(spec.n_classes))
            out.append(protein_synth_sample(label, spec, rng, families, split))
        splits[split] = out
    return TaskData("protein", splits["train"], splits["val"], splits["test"],
                    VOCAB.ids_of(CLASSES[:spec.n_classes]))


def default_spec(task: str, **overrides):
    """Desk-scale default spec per task (easy Listops, 8x8 images, 20 protein classes)."""
    if task == "listops":
        base = LISTOPS_PRESETS[overrides.pop("preset", "easy")]
    elif task == "image":
        base = ImageTaskSpec(side=8, levels=16, noise=0.25)
    elif task == "protein":
        base = ProteinTaskSpec(n_classes=20, noise=0.1)
    else:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    return replace(base, **overrides)


def build_task(task: str, spec=None, **overrides) -> TaskData:
    spec = spec if spec is not None else default_spec(task, **overrides)
    if isinstance(spec, ListopsSpec):
        return build_listops(spec)
    if isinstance(spec, ImageTaskSpec):
        return build_image(spec)
    if isinstance(spec, ProteinTaskSpec):
        return build_protein(spec)
    raise TypeError(f"unsupported task spec {type(spec).__name__}")


__all__ = [
    "DatasetFormatError", "ImageTaskSpec", "ListopsSpec", "ProteinTaskSpec", "Sample", "TASKS",
    "TaskData", "build_task", "dataset_load", "dataset_save", "default_spec", "listops_eval",
    "listops_eval_stack", "listops_generate",
]
