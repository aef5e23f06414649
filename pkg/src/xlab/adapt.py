"""Fine-tuning harness: freeze policies, input pathways, and classification runs.

Readout per architecture:

* encoder_only: ``<cls>`` is prepended and its final state is classified.
* decoder_only: ``<cls>`` is appended and the state at that last position
  is classified (it has seen the whole input under the causal mask).
* encoder_decoder: the input is encoded and one decoder step from
  ``<bos>`` is classified.

The output head is narrowed to the task's class tokens, so predictions are
an argmax restricted to the class-token subset and always a valid label.
"""
from __future__ import annotations

import csv
import fnmatch
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (INIT_STD, ConfigError, Model, build_model, forward, head_logits, load_checkpoint,
                    narrow_head, save_checkpoint)
from .pretrain.run import pad_batch
from .tasks import Sample, TaskData
from .tensor import Adam, NonFiniteError, Tape, Tensor, no_tape, ops
from .vocab import VOCAB

POLICIES = ("full", "frozen_ln_head", "custom")
PATHWAYS = ("pretrained", "reinit")
METRIC_COLUMNS = ("run_id", "source", "policy", "pathway", "task", "seed", "step", "loss", "accuracy")


class PolicyError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message: str, provenance: dict):
        super().__init__(f"{message} ({', '.join(f'{k}={v}' for k, v in provenance.items())})")
        self.provenance = provenance


# ---------------------------------------------------------------------------
# freeze policies

def is_ln_or_head(name: str) -> bool:
    """Layer-norm gain/bias or the output head."""
    if name == "head.out":
        return True
    parts = name.split(".")
    return len(parts) >= 2 and parts[-2].startswith("ln") and parts[-1] in ("gain", "bias")


@dataclass(frozen=True)
class FreezePolicy:
    name: str = "full"
    # fnmatch patterns of trainable names, for the custom policy
    patterns: tuple[str, ...] = ()

    def __post_init__(self):
        if self.name not in POLICIES:
            raise PolicyError(f"unknown policy {self.name!r}; expected one of {POLICIES}")
        if self.name == "custom" and not self.patterns:
            raise PolicyError("custom policy needs at least one pattern")

    def trainable(self, param_name: str) -> bool:
        if self.name == "full":
            return True
        if self.name == "frozen_ln_head":
            return is_ln_or_head(param_name)
        return any(fnmatch.fnmatchcase(param_name, p) for p in self.patterns)


def freeze_mask(model: Model, policy: FreezePolicy) -> dict[str, bool]:
    mask = {name: policy.trainable(name) for name in model.params}
    if not any(mask.values()):
        raise PolicyError(f"policy {policy.name!r} {list(policy.patterns)} matches no parameter")
    return mask


def trainable_fraction(model: Model, policy: FreezePolicy) -> float:
    mask = freeze_mask(model, policy)
    total = sum(p.size for p in model.params.values())
    return sum(model.params[n].size for n, t in mask.items() if t) / total


# ---------------------------------------------------------------------------
# input pathways

@dataclass(frozen=True)
class InputPathway:
    mode: str = "pretrained"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in PATHWAYS:
            raise ConfigError(f"unknown pathway {self.mode!r}; expected one of {PATHWAYS}")


def apply_pathway(model: Model, pathway: InputPathway, rng: np.random.Generator | None = None) -> Model:
    """Identity for ``pretrained``; ``reinit`` redraws only ``embed.tok``."""
    out = model.copy()
    if pathway.mode == "reinit":
        rng = rng if rng is not None else np.random.default_rng([pathway.seed, 0xE1])
        tok = out.params["embed.tok"]
        fresh = (rng.standard_normal(tok.shape) * INIT_STD).astype(tok.dtype)
        out.params["embed.tok"] = Tensor(fresh, name="embed.tok")
    return out


# ---------------------------------------------------------------------------
# batching and evaluation

def readout_inputs(arch: str, samples: list[Sample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Padded tokens, lengths, and the flat index of each sample's readout state."""
    if arch == "encoder_only":
        seqs = [(VOCAB.cls,) + s.tokens for s in samples]
    elif arch == "decoder_only":
        seqs = [s.tokens + (VOCAB.cls,) for s in samples]
    else:
        seqs = [s.tokens for s in samples]
    toks, lens = pad_batch(seqs)
    if arch == "encoder_only":
        pos = np.zeros(len(samples), dtype=np.int64)
        width = toks.shape[1]
    elif arch == "decoder_only":
        pos = lens - 1
        width = toks.shape[1]
    else:
        pos = np.zeros(len(samples), dtype=np.int64)
        width = 1
    return toks, lens, pos + np.arange(len(samples)) * width


def class_logits(model: Model, samples: list[Sample]):
    toks, lens, rows = readout_inputs(model.config.arch, samples)
    out = forward(model, toks, lengths=lens, with_logits=False)
    b, t, d = out.states.shape
    picked = ops.take_rows(ops.reshape(out.states, (b * t, d)), rows)
    return head_logits(model, picked)


def evaluate(model: Model, samples: list[Sample], batch_size: int = 250) -> tuple[float, float]:
    """(mean loss, accuracy) with predictions restricted to the head's class tokens."""
    if not samples:
        raise ValueError("no samples to evaluate")
    correct = 0
    total_loss = 0.0
    with no_tape():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            logits = class_logits(model, chunk)
            labels = np.array([s.label for s in chunk])
            total_loss += float(ops.cross_entropy(logits, labels).data) * len(chunk)
            correct += int((np.argmax(logits.data, axis=1) == labels).sum())
    return total_loss / len(samples), correct / len(samples)


def predict(model: Model, samples: list[Sample]) -> np.ndarray:
    with no_tape():
        return np.argmax(class_logits(model, samples).data, axis=1)


# ---------------------------------------------------------------------------
# runs

@dataclass(frozen=True)
class FinetuneHyper:
    lr: float = 3e-4
    batch_size: int = 32
    steps: int = 3000
    eval_every: int = 500
    # divergence guard: abort when loss > factor * initial for `patience` consecutive steps
    divergence_factor: float = 10.0
    divergence_patience: int = 50


@dataclass(frozen=True)
class FinetuneRun:
    source: str  # "scratch" or a checkpoint path
    task: str
    policy: FreezePolicy = FreezePolicy()
    pathway: InputPathway = InputPathway()
    hyper: FinetuneHyper = FinetuneHyper()
    seed: int = 0
    # architecture config for scratch runs
    config: object = None
    run_id: str = ""

    @property
    def is_scratch(self) -> bool:
        return self.source == "scratch"

    @property
    def effective_pathway(self) -> InputPathway:
        # nothing to inherit from scratch: the input layer is necessarily fresh
        return InputPathway("reinit", self.pathway.seed) if self.is_scratch else self.pathway

    def provenance(self) -> dict:
        return {"run_id": self.run_id, "source": "scratch" if self.is_scratch else "pretrained",
                "policy": self.policy.name, "pathway": self.effective_pathway.mode,
                "task": self.task, "seed": self.seed}


@dataclass
class FinetuneResult:
    model: Model
    final_accuracy: float
    best_accuracy: float
    initial_accuracy: float
    trainable_fraction: float
    mask: dict[str, bool]
    losses: list[float] = field(default_factory=list)
    # (step, val loss, val accuracy) at each evaluation
    evals: list[tuple[int, float, float]] = field(default_factory=list)
    test_accuracy: float = math.nan

    def metric_rows(self, run: FinetuneRun) -> list[dict]:
        prov = run.provenance()
        return [{**prov, "step": step, "loss": loss, "accuracy": acc} for step, loss, acc in self.evals]


def prepare_model(run: FinetuneRun, data: TaskData, base: Model | None = None) -> Model:
    """Source model with the chosen pathway applied and the head narrowed to class tokens."""
    if run.is_scratch:
        if run.config is None:
            raise ConfigError("scratch runs need a model config")
        model = build_model(run.config, rng_seed=run.seed)
    else:
        model = base if base is not None else load_checkpoint(run.source)
    model = apply_pathway(model, run.effective_pathway)
    cfg = model.config
    need = data.max_len + (0 if cfg.arch == "encoder_decoder" else 1)
    if need > cfg.max_seq_len:
        raise ConfigError(f"task {data.name} needs max_seq_len >= {need}, model has {cfg.max_seq_len}")
    if max(data.class_tokens) >= cfg.vocab_size:
        raise ConfigError(f"class tokens of task {data.name} fall outside the model vocabulary")
    return narrow_head(model, data.class_tokens)


def finetune_run(run: FinetuneRun, data: TaskData, base: Model | None = None, log=None) -> FinetuneResult:
    """Train the policy's trainable parameters on ``data.train``; evaluate on val and test.

    Deterministic given ``run``. Frozen parameters never receive gradients
    and are left out of the optimizer, so they stay bit-identical.
    """
    hyper = run.hyper
    model = prepare_model(run, data, base)
    mask = freeze_mask(model, run.policy)
    frac = trainable_fraction(model, run.policy)
    trainable = {n: p for n, p in model.params.items() if mask[n]}
    for n, p in model.params.items():
        p.requires_grad = mask[n]
    opt = Adam(trainable, lr=hyper.lr)
    rng = np.random.default_rng([run.seed, 0xF1])
    train = data.train

    _, acc0 = evaluate(model, data.val)
    result = FinetuneResult(model, acc0, acc0, acc0, frac, mask)
    initial_loss = None
    over = 0
    for step in range(1, hyper.steps + 1):
        idx = rng.integers(len(train), size=hyper.batch_size)
        batch = [train[i] for i in idx]
        opt.zero_grad()
        with Tape() as tape:
            loss = ops.cross_entropy(class_logits(model, batch), [s.label for s in batch])
        value = float(loss.data)
        if not math.isfinite(value):
            raise DivergenceError(f"loss is {value} at step {step}", run.provenance())
        initial_loss = value if initial_loss is None else initial_loss
        over = over + 1 if value > hyper.divergence_factor * initial_loss else 0
        if over >= hyper.divergence_patience:
            raise DivergenceError(f"loss above {hyper.divergence_factor}x initial for {over} steps", run.provenance())
        try:
            tape.backward(loss)
            opt.step()
        except NonFiniteError as exc:
            raise DivergenceError(str(exc), run.provenance()) from None
        result.losses.append(value)
        if step % hyper.eval_every == 0 or step == hyper.steps:
            vl, va = evaluate(model, data.val)
            result.evals.append((step, vl, va))
            result.best_accuracy = max(result.best_accuracy, va)
            result.final_accuracy = va
            if log is not None:
                log(f"step {step} train_loss {np.mean(result.losses[-hyper.eval_every:]):.4f} "
                    f"val_loss {vl:.4f} val_acc {va:.4f}")
    for p in model.params.values():
        p.requires_grad = False
        p.grad = None
    if not result.evals:
        vl, va = evaluate(model, data.val)
        result.evals.append((0, vl, va))
    result.test_accuracy = evaluate(model, data.test)[1]
    return result


def write_metrics_csv(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "loss": repr(float(r["loss"])), "accuracy": repr(float(r["accuracy"]))})


def save_adapted(result: FinetuneResult, path) -> None:
    save_checkpoint(result.model, path)


__all__ = [
    "DivergenceError", "FinetuneHyper", "FinetuneResult", "FinetuneRun", "FreezePolicy", "InputPathway",
    "METRIC_COLUMNS", "PolicyError", "apply_pathway", "evaluate", "finetune_run", "freeze_mask",
    "predict", "prepare_model", "save_adapted", "trainable_fraction",
    "write_metrics_csv",
]
