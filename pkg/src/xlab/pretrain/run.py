"""Pretraining loop producing a checkpoint and a per-step loss curve."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..model import Model, ModelConfig, build_model, forward, head_logits, save_checkpoint
from ..tensor import Adam, Tape, ops
from ..vocab import VOCAB
from .corpus import CorpusSpec, gen_corpus
from .objectives import Example, PretrainObjective, check_compatible, make_example


@dataclass(frozen=True)
class PretrainHyper:
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0


@dataclass
class PretrainResult:
    model: Model
    losses: list[float] = field(default_factory=list)

    def window_means(self, window: int = 100) -> tuple[float, float]:
        """Mean loss over the first and the last ``window`` steps."""
        if len(self.losses) < window:
            raise ValueError(f"need at least {window} steps, have {len(self.losses)}")
        return float(np.mean(self.losses[:window])), float(np.mean(self.losses[-window:]))


def pad_batch(seqs, pad: int = VOCAB.pad) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad integer sequences to the batch maximum; returns (tokens, lengths)."""
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if (lengths < 1).any():
        raise ValueError("empty sequence in batch")
    out = np.full((len(seqs), int(lengths.max())), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, lengths


def example_loss(model: Model, examples: list[Example]):
    """Mean cross-entropy over every scored position of a batch of examples."""
    toks, lens = pad_batch([e.inputs for e in examples])
    if examples[0].decoder_inputs is not None:
        dec, dlens = pad_batch([e.decoder_inputs for e in examples])
        out = forward(model, toks, lengths=lens, decoder_tokens=dec, decoder_lengths=dlens, with_logits=False)
    else:
        out = forward(model, toks, lengths=lens, with_logits=False)
    b, t, d = out.states.shape
    rows = np.concatenate([np.asarray(e.positions, dtype=np.int64) + i * t for i, e in enumerate(examples)])
    targets = np.concatenate([np.asarray(e.targets, dtype=np.int64) for e in examples])
    picked = ops.take_rows(ops.reshape(out.states, (b * t, d)), rows)
    return ops.cross_entropy(head_logits(model, picked), targets)


def _batch(corpus, objective, rng, batch_size) -> list[Example]:
    idx = rng.integers(len(corpus), size=batch_size)
    examples = [make_example(corpus[i], objective, rng) for i in idx]
    if not any(e.positions for e in examples):
        # an all-unmasked MLM batch has nothing to score; mask one token deterministically
        e = examples[0]
        p = 1 + int(rng.integers(len(e.inputs) - 1))
        examples[0] = Example(e.inputs[:p] + [VOCAB.mask] + e.inputs[p + 1:], None, [p], [e.inputs[p]])
    return examples


def pretrain_run(config: ModelConfig, corpus, objective: PretrainObjective, steps: int,
                 hyper: PretrainHyper = PretrainHyper(), out_dir=None, log=None) -> PretrainResult:
    """Pretrain a freshly initialized model for ``steps`` Adam steps.

    ``corpus`` is a :class:`CorpusSpec` or an already generated list of
    token-id sequences. Everything is seeded from ``hyper.seed``, so the
    result is bit-reproducible. With ``out_dir`` the checkpoint and the loss
    curve are written there as ``model.ckpt`` and ``loss.csv``.
    """
    check_compatible(config.arch, objective)
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if isinstance(corpus, CorpusSpec):
        corpus = gen_corpus(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    longest = max(len(s) for s in corpus) + 2
    if longest > config.max_seq_len:
        raise ValueError(f"corpus sequences need max_seq_len >= {longest}")
    model = build_model(config, hyper.seed)
    for p in model.params.values():
        p.requires_grad = True
    opt = Adam(model.params, lr=hyper.lr)
    rng = np.random.default_rng([hyper.seed, 0xC0])
    result = PretrainResult(model)
    for step in range(steps):
        examples = _batch(corpus, objective, rng, hyper.batch_size)
        opt.zero_grad()
        with Tape() as tape:
            loss = example_loss(model, examples)
        tape.backward(loss)
        opt.step()
        result.losses.append(float(loss.data))
        if log is not None and (step + 1) % 100 == 0:
            log(f"pretrain step {step + 1}/{steps} loss {np.mean(result.losses[-100:]):.4f}")
    for p in model.params.values():
        p.requires_grad = False
        p.grad = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        save_checkpoint(model, out_dir / "model.ckpt")
        write_loss_csv(result.losses, out_dir / "loss.csv")
    return result


def write_loss_csv(losses, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, loss in enumerate(losses, 1):
            w.writerow([i, repr(float(loss))])


def read_loss_csv(path) -> list[float]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["step", "loss"]:
        raise ValueError(f"{path}: expected a 'step,loss' header")
    return [float(r[1]) for r in rows[1:]]
