"""Pretraining objectives: span corruption, masked LM, causal LM.

Every objective turns one corpus sequence into an ``Example``: the encoder
(or sole stack) input, optional decoder input, the positions that are
scored, and the target token at each scored position.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..vocab import N_SENTINELS, VOCAB

KINDS = ("span_corruption", "mlm", "causal_lm")


class ObjectiveError(ValueError):
    pass


@dataclass(frozen=True)
class PretrainObjective:
    kind: str
    mask_rate: float = 0.15
    mean_span_length: float = 3.0
    # span corruption only: decode the whole original sequence instead of the removed spans
    full_target: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ObjectiveError(f"unknown objective {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.mask_rate < 1.0:
            raise ObjectiveError(f"mask_rate must lie in [0, 1), got {self.mask_rate}")
        if self.mean_span_length < 1:
            raise ObjectiveError("mean_span_length must be at least 1")
        if self.full_target and self.kind != "span_corruption":
            raise ObjectiveError("full_target applies to span_corruption only")

    @property
    def sentinel_ids(self) -> tuple[int, ...]:
        return tuple(VOCAB.sentinel(i) for i in range(N_SENTINELS))

    @property
    def label(self) -> str:
        return "span_corruption+full_target" if self.full_target else self.kind


def _composition(total: int, parts: int, rng: np.random.Generator) -> list[int]:
    """Random split of ``total`` into ``parts`` positive integers."""
    if parts == 1:
        return [total]
    cuts = np.sort(rng.choice(np.arange(1, total), size=parts - 1, replace=False))
    return np.diff(np.concatenate(([0], cuts, [total]))).tolist()


def _weak_composition(total: int, parts: int, rng: np.random.Generator) -> list[int]:
    """Random split of ``total`` into ``parts`` non-negative integers."""
    bins = rng.integers(0, parts, size=total)
    return np.bincount(bins, minlength=parts).tolist()


def noise_spans(n: int, objective: PretrainObjective, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Sorted, disjoint ``(start, end)`` spans covering ~``mask_rate * n`` tokens."""
    n_noise = min(n, int(round(n * objective.mask_rate)))
    if n_noise == 0:
        return []
    n_keep = n - n_noise
    n_spans = max(1, int(round(n_noise / objective.mean_span_length)))
    # spans are separated by at least one kept token
    n_spans = min(n_spans, n_noise, n_keep + 1, N_SENTINELS)
    noise = _composition(n_noise, n_spans, rng)
    # kept runs: before, between (>= 1 each), after
    spare = n_keep - (n_spans - 1)
    extra = _weak_composition(spare, n_spans + 1, rng)
    keep = [extra[0]] + [1 + e for e in extra[1:-1]] + [extra[-1]]
    spans, pos = [], keep[0]
    for i, length in enumerate(noise):
        spans.append((pos, pos + length))
        pos += length + keep[i + 1]
    return spans


def span_corrupt(seq, objective: PretrainObjective, rng: np.random.Generator) -> tuple[list[int], list[int]]:
    """Replace each noise span with one sentinel; the target lists the removed spans.

    Target layout: ``<s0> span0 <s1> span1 ... <eos>``. With
    ``full_target`` the target is instead the whole sequence plus ``<eos>``.
    Sequences shorter than two tokens pass through with an empty target.
    """
    if objective.kind != "span_corruption":
        raise ObjectiveError(f"span_corrupt needs a span_corruption objective, got {objective.kind}")
    seq = [int(t) for t in seq]
    if len(seq) < 2:
        return list(seq), []
    spans = noise_spans(len(seq), objective, rng)
    inp: list[int] = []
    tgt: list[int] = []
    prev = 0
    for i, (s, e) in enumerate(spans):
        inp.extend(seq[prev:s])
        inp.append(VOCAB.sentinel(i))
        tgt.append(VOCAB.sentinel(i))
        tgt.extend(seq[s:e])
        prev = e
    inp.extend(seq[prev:])
    tgt.append(VOCAB.eos)
    if objective.full_target:
        tgt = seq + [VOCAB.eos]
    return inp, tgt


def mlm_mask(seq, objective: PretrainObjective, rng: np.random.Generator) -> tuple[list[int], list[int], list[int]]:
    """Mask each position independently with probability ``mask_rate``.

    Returns ``(input, masked positions, original tokens at those positions)``.
    """
    if objective.kind != "mlm":
        raise ObjectiveError(f"mlm_mask needs an mlm objective, got {objective.kind}")
    seq = [int(t) for t in seq]
    hit = rng.random(len(seq)) < objective.mask_rate
    positions = np.flatnonzero(hit).tolist()
    inp = [VOCAB.mask if h else t for t, h in zip(seq, hit)]
    return inp, positions, [seq[p] for p in positions]


@dataclass
class Example:
    inputs: list[int]
    # decoder inputs for encoder_decoder; None for single-stack archs
    decoder_inputs: list[int] | None
    # positions (in the scored stream) with a prediction target
    positions: list[int]
    targets: list[int]


def make_example(seq, objective: PretrainObjective, rng: np.random.Generator) -> Example:
    seq = [int(t) for t in seq]
    if objective.kind == "causal_lm":
        inp = [VOCAB.bos] + seq
        return Example(inp, None, list(range(len(inp))), seq + [VOCAB.eos])
    if objective.kind == "mlm":
        inp, pos, orig = mlm_mask(seq, objective, rng)
        # <cls> leads every encoder input, matching the fine-tuning readout
        return Example([VOCAB.cls] + inp, None, [p + 1 for p in pos], orig)
    inp, tgt = span_corrupt(seq, objective, rng)
    if not tgt:
        tgt = [VOCAB.eos]
    dec = [VOCAB.bos] + tgt[:-1]
    return Example(inp, dec, list(range(len(tgt))), tgt)


# arch -> objective kinds it can be pretrained with
COMPATIBLE = {
    "encoder_only": ("mlm",),
    "decoder_only": ("causal_lm",),
    "encoder_decoder": ("span_corruption",),
}


def check_compatible(arch: str, objective: PretrainObjective) -> None:
    allowed = COMPATIBLE.get(arch, ())
    if objective.kind not in allowed:
        raise ObjectiveError(f"objective {objective.kind!r} is incompatible with arch {arch!r} "
                             f"(allowed: {', '.join(allowed) or 'none'})")


def default_objective(arch: str, denoise: bool = False) -> PretrainObjective:
    """Native objective per architecture; ``denoise`` selects the full-target variant."""
    if arch == "encoder_only":
        return PretrainObjective("mlm")
    if arch == "decoder_only":
        return PretrainObjective("causal_lm")
    if arch == "encoder_decoder":
        return PretrainObjective("span_corruption", full_target=denoise)
    raise ObjectiveError(f"unknown arch {arch!r}")
