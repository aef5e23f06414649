"""Synthetic pretraining corpus, objectives, and the pretraining loop."""
from .corpus import CorpusError, CorpusSpec, bracket_depth, gen_corpus, load_corpus, save_corpus, vocabulary_coverage
from .objectives import (ObjectiveError, PretrainObjective, check_compatible, default_objective, make_example,
                         mlm_mask, span_corrupt)
from .run import PretrainHyper, PretrainResult, pad_batch, pretrain_run, read_loss_csv, write_loss_csv

__all__ = [
    "CorpusError", "CorpusSpec", "ObjectiveError", "PretrainHyper", "PretrainObjective", "PretrainResult",
    "bracket_depth", "check_compatible", "default_objective", "gen_corpus", "load_corpus", "make_example",
    "mlm_mask", "pad_batch", "pretrain_run", "read_loss_csv", "save_corpus", "span_corrupt",
    "vocabulary_coverage", "write_loss_csv",
]
