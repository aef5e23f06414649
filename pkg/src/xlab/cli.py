"""``xlab`` command line: gen-data, pretrain, finetune, eval, matrix, report.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines
(``#`` starts a comment); command-line flags override file values. Keys are
the long flag names with dashes or underscores.

Exit codes: 0 success, 2 usage or config error, 3 data or checkpoint error,
4 training diverged, 5 matrix finished with failed cells, 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_CELLS_FAILED = 5


class UsageError(Exception):
    pass


def _csv_list(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in str(value).split(",") if v.strip())


# option name -> (type, default, help); default REQUIRED marks mandatory options
REQUIRED = object()

_DATA_OPTS = {
    "task": (str, REQUIRED, "listops | image | protein | corpus"),
    "seed": (int, REQUIRED, "generator seed"),
    "out": (str, REQUIRED, "output directory"),
    "n_train": (int, None, "training samples (corpus: number of sequences)"),
    "n_val": (int, None, "validation samples"),
    "n_test": (int, None, "test samples"),
    "listops_preset": (str, "easy", "listops difficulty preset: easy | medium"),
}
_PRETRAIN_OPTS = {
    "arch": (str, REQUIRED, "encoder_only | decoder_only | encoder_decoder"),
    "size": (str, "mini-small", "model preset: mini-small | mini-base"),
    "seed": (int, REQUIRED, "initialization and batching seed"),
    "steps": (int, 5000, "optimizer steps"),
    "out": (str, REQUIRED, "output directory (model.ckpt, loss.csv)"),
    "objective": (str, "auto", "auto | mlm | causal_lm | span_corruption | denoise"),
    "corpus": (str, None, "token-id corpus file; generated from --corpus-seed when omitted"),
    "corpus_sequences": (int, 20000, "sequences to generate when no corpus file is given"),
    "corpus_seed": (int, 0, "corpus generation seed"),
    "lr": (float, 1e-3, "Adam learning rate"),
    "batch_size": (int, 32, "sequences per step"),
    "max_seq_len": (int, 272, "positional table size"),
}
_FINETUNE_OPTS = {
    "checkpoint": (str, REQUIRED, "pretrained checkpoint path, or 'scratch'"),
    "arch": (str, "encoder_decoder", "architecture for scratch runs"),
    "size": (str, "mini-small", "model preset for scratch runs"),
    "data": (str, REQUIRED, "task dataset directory written by gen-data"),
    "task": (str, None, "task name (defaults to the data directory name)"),
    "policy": (str, "full", "full | frozen_ln_head | custom"),
    "trainable": (_csv_list, (), "comma-separated name patterns for the custom policy"),
    "pathway": (str, "pretrained", "pretrained | reinit"),
    "seed": (int, REQUIRED, "batching and reinitialization seed"),
    "steps": (int, 3000, "optimizer steps"),
    "lr": (float, 3e-4, "Adam learning rate"),
    "batch_size": (int, 32, "samples per step"),
    "eval_every": (int, 500, "validation cadence in steps"),
    "out": (str, REQUIRED, "output directory (model.ckpt, metrics.csv, result.json)"),
}
_EVAL_OPTS = {
    "checkpoint": (str, REQUIRED, "fine-tuned checkpoint"),
    "data": (str, REQUIRED, "task dataset directory"),
    "split": (str, "test", "train | val | test"),
}
_REPORT_OPTS = {
    "out": (str, REQUIRED, "matrix output directory"),
    "table": (str, "all", "T1 | T3 | T4 | T5 | T6 | T7 | all"),
    "format": (str, "markdown", "markdown | csv"),
}


def _matrix_opts() -> dict:
    from .experiments import ExperimentMatrix

    opts = {
        "preset": (str, "paper-mini", "matrix preset: paper-mini | smoke | single"),
        "out": (str, REQUIRED, "output directory (resumable)"),
    }
    for f in fields(ExperimentMatrix):
        kind = _csv_list if "tuple" in str(f.type) else {"int": int, "float": float}.get(str(f.type), str)
        opts[f.name] = (kind, None, f"override the preset's {f.name}")
    opts["seed"] = (int, REQUIRED, "matrix seed (replicates use seed, seed+1, ...)")
    return opts


COMMANDS = {
    "gen-data": ("generate a task dataset or the pretraining corpus", lambda: _DATA_OPTS),
    "pretrain": ("pretrain a model on the synthetic corpus", lambda: _PRETRAIN_OPTS),
    "finetune": ("fine-tune a checkpoint (or a scratch model) on a task", lambda: _FINETUNE_OPTS),
    "eval": ("evaluate a fine-tuned checkpoint", lambda: _EVAL_OPTS),
    "matrix": ("run the ablation matrix", _matrix_opts),
    "report": ("print table projections of a matrix run", lambda: _REPORT_OPTS),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xlab", description="Cross-domain transfer experiments at desk scale.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, (help_text, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="key = value configuration file")
        for key, (_, default, help_opt) in opts().items():
            suffix = " (required)" if default is REQUIRED else ("" if default is None else f" (default {default})")
            p.add_argument("--" + key.replace("_", "-"), dest=key, help=help_opt + suffix)
    return parser


def read_config(path, valid) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in valid:
            raise UsageError(f"{path}:{n}: unknown key {key!r}; valid keys: {', '.join(sorted(valid))}")
        out[key] = value
    return out


def resolve(command: str, ns: argparse.Namespace) -> dict:
    """Defaults, then config file, then flags; values converted with each option's type."""
    opts = COMMANDS[command][1]()
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    merged = {}
    if getattr(ns, "config", None):
        merged.update(read_config(ns.config, opts))
    merged.update(given)
    values = {}
    for key, (kind, default, _) in opts.items():
        if key in merged:
            try:
                values[key] = kind(merged[key])
            except (TypeError, ValueError):
                raise UsageError(f"bad value for {key}: {merged[key]!r}") from None
        elif default is REQUIRED:
            raise UsageError(f"--{key.replace('_', '-')} is required for {command}")
        else:
            values[key] = default
    return values


def _log(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(v: dict) -> int:
    from .pretrain import CorpusSpec, gen_corpus, save_corpus
    from .tasks import TASKS, build_task

    out = Path(v["out"])
    if v["task"] == "corpus":
        n = v["n_train"] or 20000
        corpus = gen_corpus(CorpusSpec(n_sequences=n, seed=v["seed"]))
        out.mkdir(parents=True, exist_ok=True)
        save_corpus(corpus, out / "corpus.txt")
        _log(f"wrote {n} sequences to {out / 'corpus.txt'}")
        return EXIT_OK
    if v["task"] not in TASKS:
        raise UsageError(f"unknown task {v['task']!r}; expected one of {TASKS + ('corpus',)}")
    overrides = {k: v[k] for k in ("n_train", "n_val", "n_test") if v[k] is not None}
    if v["task"] == "listops":
        overrides["preset"] = v["listops_preset"]
    data = build_task(v["task"], seed=v["seed"], **overrides)
    data.save(out)
    _log(f"wrote {v['task']} dataset to {out}: {len(data.train)}/{len(data.val)}/{len(data.test)} "
         f"samples, {data.n_classes} classes, max length {data.max_len}")
    return EXIT_OK


def cmd_pretrain(v: dict) -> int:
    from .model import preset
    from .pretrain import (CorpusSpec, PretrainHyper, PretrainObjective, default_objective, load_corpus,
                           pretrain_run)

    obj_name = v["objective"]
    if obj_name == "auto":
        objective = default_objective(v["arch"])
    elif obj_name == "denoise":
        objective = PretrainObjective("span_corruption", full_target=True)
    else:
        objective = PretrainObjective(obj_name)
    config = preset(v["size"], v["arch"], max_seq_len=v["max_seq_len"])
    corpus = load_corpus(v["corpus"]) if v["corpus"] else CorpusSpec(n_sequences=v["corpus_sequences"],
                                                                      seed=v["corpus_seed"])
    hyper = PretrainHyper(lr=v["lr"], batch_size=v["batch_size"], seed=v["seed"])
    _log(f"pretraining {v['arch']} ({v['size']}) with {objective.label} for {v['steps']} steps")
    res = pretrain_run(config, corpus, objective, v["steps"], hyper, out_dir=v["out"], log=_log)
    if len(res.losses) >= 2:
        w = min(100, len(res.losses) // 2)
        first, last = res.window_means(w)
        _log(f"loss first {w} steps {first:.4f} -> last {w} steps {last:.4f}")
    _log(f"wrote {Path(v['out']) / 'model.ckpt'}")
    return EXIT_OK


def cmd_finetune(v: dict) -> int:
    from .adapt import (FinetuneHyper, FinetuneRun, FreezePolicy, InputPathway, finetune_run, freeze_mask,
                        prepare_model, save_adapted, write_metrics_csv)
    from .model import preset
    from .tasks import TaskData

    data_dir = Path(v["data"])
    task = v["task"] or data_dir.name
    data = TaskData.load(data_dir, task)
    policy = FreezePolicy(v["policy"], tuple(v["trainable"]))
    hyper = FinetuneHyper(lr=v["lr"], batch_size=v["batch_size"], steps=v["steps"], eval_every=v["eval_every"])
    scratch = v["checkpoint"] == "scratch"
    config = preset(v["size"], v["arch"], max_seq_len=max(272, data.max_len + 1)) if scratch else None
    run = FinetuneRun(v["checkpoint"], task, policy, InputPathway(v["pathway"], v["seed"]), hyper, v["seed"],
                      config, Path(v["out"]).name)
    model = prepare_model(run, data)
    mask = freeze_mask(model, policy)
    n_train = sum(model.params[k].size for k, t in mask.items() if t)
    n_total = sum(p.size for p in model.params.values())
    _log(f"policy {policy.name}: trainable fraction {n_train / n_total:.6f} ({n_train}/{n_total} parameters)")
    _log("trainable parameters: " + ", ".join(k for k, t in mask.items() if t))
    if scratch and v["pathway"] != "reinit":
        _log("scratch source: input layer is freshly initialized regardless of --pathway")
    res = finetune_run(run, data, base=None, log=_log)
    out = Path(v["out"])
    save_adapted(res, out / "model.ckpt")
    write_metrics_csv(res.metric_rows(run), out / "metrics.csv")
    summary = {**run.provenance(), "trainable_fraction": res.trainable_fraction, "steps": hyper.steps,
               "final_val_accuracy": res.final_accuracy, "best_val_accuracy": res.best_accuracy,
               "test_accuracy": res.test_accuracy}
    (out / "result.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    _log(f"test accuracy {res.test_accuracy:.4f} (best val {res.best_accuracy:.4f}); wrote {out}")
    return EXIT_OK


def cmd_eval(v: dict) -> int:
    from .adapt import evaluate
    from .model import load_checkpoint
    from .tasks import TaskData

    data_dir = Path(v["data"])
    data = TaskData.load(data_dir, data_dir.name)
    model = load_checkpoint(v["checkpoint"])
    if model.config.head_tokens != tuple(data.class_tokens):
        raise UsageError("checkpoint head does not match the dataset's class tokens; evaluate a fine-tuned model")
    if v["split"] not in ("train", "val", "test"):
        raise UsageError(f"unknown split {v['split']!r}")
    loss, acc = evaluate(model, data.split(v["split"]))
    _log(f"{v['split']} loss {loss:.4f} accuracy {acc:.4f} ({len(data.split(v['split']))} samples)")
    return EXIT_OK


def cmd_matrix(v: dict) -> int:
    from .experiments import ExperimentMatrix, matrix_preset, run_matrix

    overrides = {f.name: v[f.name] for f in fields(ExperimentMatrix) if v.get(f.name) is not None}
    matrix = matrix_preset(v["preset"], **overrides)
    run = run_matrix(matrix, v["out"], log=_log)
    _log(f"{len(run.cells)} cells ({run.executed} jobs executed, {len(run.pruned)} pruned groups); "
         f"report at {Path(v['out']) / 'report.csv'}")
    if run.report.failed:
        for job, err in run.report.failed:
            _log(f"failed: {job}: {err}")
        return EXIT_CELLS_FAILED
    return EXIT_OK


def cmd_report(v: dict) -> int:
    from .experiments import TABLES, build_report, project_table

    out = Path(v["out"])
    if not (out / "matrix.json").exists():
        raise UsageError(f"{out} is not a matrix output directory")
    report = build_report(out)
    ids = TABLES if v["table"] == "all" else (v["table"],)
    for tid in ids:
        if tid not in TABLES:
            raise UsageError(f"unknown table {tid!r}; expected one of {', '.join(TABLES)} or all")
        t = project_table(report, tid)
        sys.stdout.write(t.to_markdown() if v["format"] == "markdown" else t.to_csv())
        if len(ids) > 1:
            sys.stdout.write("\n")
    return EXIT_OK


HANDLERS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune, "eval": cmd_eval,
            "matrix": cmd_matrix, "report": cmd_report}


def main(argv=None) -> int:
    from .adapt import DivergenceError, PolicyError
    from .experiments import MatrixError
    from .model import CheckpointError, ConfigError, VocabularyError
    from .pretrain import CorpusError, ObjectiveError
    from .tasks import DatasetFormatError
    from .tasks.image import ImageDataError, PGMFormatError
    from .tasks.listops import ListopsParseError, ListopsSpecError
    from .tasks.protein import ProteinDataError

    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if ns.command is None:
        parser.print_help()
        return EXIT_USAGE
    try:
        values = resolve(ns.command, ns)
        return HANDLERS[ns.command](values)
    except (UsageError, ConfigError, PolicyError, MatrixError, ObjectiveError, CorpusError) as exc:
        print(f"xlab {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, DatasetFormatError, VocabularyError, FileNotFoundError, ImageDataError, PGMFormatError,
            ListopsParseError, ListopsSpecError, ProteinDataError) as exc:
        print(f"xlab {ns.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"xlab {ns.command}: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except Exception as exc:  # noqa: BLE001 - reported with a distinct exit code
        print(f"xlab {ns.command}: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
