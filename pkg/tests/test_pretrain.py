from dataclasses import replace

import numpy as np
import pytest

from xlab.model import build_model, checkpoint_bytes, load_checkpoint, preset
from xlab.pretrain import (CorpusError, CorpusSpec, ObjectiveError, PretrainHyper, PretrainObjective, check_compatible,
                           default_objective, gen_corpus, make_example, mlm_mask, pretrain_run, span_corrupt)
from xlab.pretrain.corpus import bracket_depth, load_corpus, save_corpus, vocabulary_coverage
from xlab.pretrain.objectives import noise_spans
from xlab.pretrain.run import pad_batch, read_loss_csv
from xlab.vocab import VOCAB

from conftest import tiny_config

SPAN = PretrainObjective("span_corruption")
MLM = PretrainObjective("mlm")


@pytest.fixture(scope="module")
def small_corpus():
    return gen_corpus(CorpusSpec(n_sequences=200, seed=1))


class TestCorpus:
    def test_deterministic(self):
        spec = CorpusSpec(n_sequences=50, seed=9)
        assert gen_corpus(spec) == gen_corpus(spec)
        assert gen_corpus(spec) != gen_corpus(replace(spec, seed=10))

    def test_lengths_in_range(self, small_corpus):
        assert all(16 <= len(s) <= 64 for s in small_corpus)

    def test_depth_bound(self, small_corpus):
        spec = CorpusSpec()
        assert max(bracket_depth(VOCAB.decode(s), spec.open_symbols) for s in small_corpus) <= spec.max_depth

    def test_depth_zero_has_no_brackets(self):
        spec = CorpusSpec(n_sequences=100, max_depth=0)
        opening = {VOCAB.id(s) for s in spec.open_symbols}
        assert not any(t in opening for seq in gen_corpus(spec) for t in seq)

    def test_coverage_of_every_task_symbol(self):
        corpus = gen_corpus(CorpusSpec(n_sequences=10_000, seed=0))
        required = VOCAB.ids_of(VOCAB.corpus_symbols)
        cov = vocabulary_coverage(corpus, required)
        worst = min(cov, key=cov.get)
        assert cov[worst] >= 0.001, (VOCAB.decode([worst]), cov[worst])

    def test_non_terminating_grammar(self):
        rules = {"$S": [(1.0, ("$S", "7"))]}
        spec = CorpusSpec(rules=rules, n_sequences=1, derivation_cap=50, length_range=(1, 10_000))
        with pytest.raises(CorpusError, match="does not terminate"):
            gen_corpus(spec)

    def test_nonterminal_clash(self):
        with pytest.raises(CorpusError, match="collide"):
            gen_corpus(CorpusSpec(rules={"$S": [(1.0, ("S",))], "S": [(1.0, ("a",))]}, n_sequences=1))

    def test_unknown_terminal(self):
        with pytest.raises(CorpusError, match="outside"):
            gen_corpus(CorpusSpec(rules={"$S": [(1.0, ("zzzz_not_a_word",))]}, n_sequences=1, length_range=(1, 2)))

    def test_file_round_trip(self, small_corpus, tmp_path):
        save_corpus(small_corpus, tmp_path / "c.txt")
        assert load_corpus(tmp_path / "c.txt") == small_corpus


class TestObjectives:
    def test_rate_bounds(self):
        with pytest.raises(ObjectiveError):
            PretrainObjective("mlm", mask_rate=1.0)
        with pytest.raises(ObjectiveError):
            PretrainObjective("mlm", mask_rate=-0.1)
        with pytest.raises(ObjectiveError):
            PretrainObjective("causal_lm", full_target=True)

    def test_sentinels_outside_corpus(self):
        terms = {VOCAB.id(s) for s in CorpusSpec().terminals()}
        assert not terms & set(SPAN.sentinel_ids)

    def test_span_rate_zero(self):
        seq = list(range(40, 60))
        inp, tgt = span_corrupt(seq, PretrainObjective("span_corruption", mask_rate=0.0), np.random.default_rng(0))
        assert inp == seq and tgt == [VOCAB.eos]

    def test_span_rate_near_one(self):
        seq = list(range(40, 50))
        inp, tgt = span_corrupt(seq, PretrainObjective("span_corruption", mask_rate=0.999), np.random.default_rng(0))
        s0 = VOCAB.sentinel(0)
        assert inp == [s0] and tgt == [s0] + seq + [VOCAB.eos]

    def test_span_short_passthrough(self):
        assert span_corrupt([41], SPAN, np.random.default_rng(0)) == ([41], [])

    def test_span_conservation(self, small_corpus):
        rng = np.random.default_rng(0)
        sent = set(SPAN.sentinel_ids)
        for seq in small_corpus:
            inp, tgt = span_corrupt(seq, SPAN, rng)
            # stitch the sequence back together: each sentinel in the input takes its span from the target
            spans, cur = {}, None
            for t in tgt[:-1]:
                if t in sent:
                    cur = t
                    spans[cur] = []
                else:
                    spans[cur].append(t)
            rebuilt = [x for t in inp for x in (spans[t] if t in sent else [t])]
            assert rebuilt == seq
            assert tgt[-1] == VOCAB.eos
            assert [t for t in inp if t in sent] == [VOCAB.sentinel(i) for i in range(len(spans))]

    def test_span_full_target(self):
        seq = list(range(40, 70))
        obj = PretrainObjective("span_corruption", full_target=True)
        inp, tgt = span_corrupt(seq, obj, np.random.default_rng(0))
        assert tgt == seq + [VOCAB.eos] and len(inp) < len(seq)

    def test_span_fraction_monte_carlo(self):
        obj = PretrainObjective("span_corruption", mask_rate=0.3, mean_span_length=3.0)
        rng = np.random.default_rng(0)
        fracs = [sum(e - s for s, e in noise_spans(100, obj, rng)) / 100 for _ in range(1000)]
        assert 0.15 <= np.mean(fracs) <= 0.45
        assert all(0.15 <= f <= 0.45 for f in fracs)

    def test_spans_disjoint_and_separated(self):
        rng = np.random.default_rng(3)
        for n in (2, 3, 7, 50, 200):
            spans = noise_spans(n, SPAN, rng)
            for (a, b), (c, d) in zip(spans, spans[1:]):
                assert a < b < c < d
            assert all(0 <= s < e <= n for s, e in spans)

    def test_mlm_boundaries(self):
        seq = list(range(40, 80))
        inp, pos, orig = mlm_mask(seq, PretrainObjective("mlm", mask_rate=0.0), np.random.default_rng(0))
        assert inp == seq and pos == [] and orig == []
        inp, pos, orig = mlm_mask(seq, PretrainObjective("mlm", mask_rate=0.9999999), np.random.default_rng(0))
        assert inp == [VOCAB.mask] * 40 and orig == seq

    def test_mlm_leaves_unmasked_positions(self, small_corpus):
        rng = np.random.default_rng(0)
        for seq in small_corpus[:50]:
            inp, pos, orig = mlm_mask(seq, MLM, rng)
            keep = set(range(len(seq))) - set(pos)
            assert all(inp[i] == seq[i] for i in keep)
            assert [seq[p] for p in pos] == orig

    def test_mlm_fraction_monte_carlo(self):
        rng = np.random.default_rng(0)
        _, pos, _ = mlm_mask(np.full(10_000, 42), MLM, rng)
        assert abs(len(pos) / 10_000 - 0.15) <= 0.02

    def test_wrong_kind(self):
        with pytest.raises(ObjectiveError):
            span_corrupt([1, 2, 3], MLM, np.random.default_rng(0))
        with pytest.raises(ObjectiveError):
            mlm_mask([1, 2, 3], SPAN, np.random.default_rng(0))

    def test_examples(self):
        seq = [40, 41, 42]
        ex = make_example(seq, PretrainObjective("causal_lm"), np.random.default_rng(0))
        assert ex.inputs == [VOCAB.bos] + seq and ex.targets == seq + [VOCAB.eos]
        ex = make_example(seq, PretrainObjective("mlm", mask_rate=0.9999999), np.random.default_rng(0))
        assert ex.inputs[0] == VOCAB.cls and ex.positions == [1, 2, 3] and ex.targets == seq
        ex = make_example(list(range(40, 60)), SPAN, np.random.default_rng(0))
        assert ex.decoder_inputs == [VOCAB.bos] + ex.targets[:-1]

    @pytest.mark.parametrize("arch, kind", [("encoder_only", "causal_lm"), ("decoder_only", "mlm"),
                                            ("encoder_decoder", "mlm"), ("decoder_only", "span_corruption")])
    def test_incompatible_pairs(self, arch, kind):
        with pytest.raises(ObjectiveError, match="incompatible"):
            check_compatible(arch, PretrainObjective(kind))

    def test_default_objectives(self):
        assert default_objective("encoder_only").kind == "mlm"
        assert default_objective("decoder_only").kind == "causal_lm"
        assert default_objective("encoder_decoder", denoise=True).label == "span_corruption+full_target"


class TestPretrainRun:
    def test_pad_batch(self):
        toks, lens = pad_batch([[5, 6, 7], [8]])
        assert toks.tolist() == [[5, 6, 7], [8, VOCAB.pad, VOCAB.pad]] and lens.tolist() == [3, 1]

    def test_zero_steps_is_initialization(self, small_corpus, tmp_path):
        c = tiny_config("decoder_only", max_seq_len=66)
        res = pretrain_run(c, small_corpus, PretrainObjective("causal_lm"), 0, PretrainHyper(seed=4), out_dir=tmp_path)
        assert res.losses == []
        assert checkpoint_bytes(load_checkpoint(tmp_path / "model.ckpt")) == checkpoint_bytes(build_model(c, 4))
        assert read_loss_csv(tmp_path / "loss.csv") == []

    @pytest.mark.parametrize("arch", ["encoder_only", "decoder_only", "encoder_decoder"])
    def test_bit_identical_reruns(self, small_corpus, arch):
        c = tiny_config(arch, max_seq_len=66)
        obj = default_objective(arch)
        hyper = PretrainHyper(batch_size=4, seed=2)
        a = pretrain_run(c, small_corpus, obj, 5, hyper)
        b = pretrain_run(c, small_corpus, obj, 5, hyper)
        assert checkpoint_bytes(a.model) == checkpoint_bytes(b.model)
        assert a.losses == b.losses and all(np.isfinite(a.losses))

    def test_incompatible_objective(self, small_corpus):
        with pytest.raises(ObjectiveError):
            pretrain_run(tiny_config("encoder_only", max_seq_len=66), small_corpus, PretrainObjective("causal_lm"), 1)

    def test_sequence_too_long_for_model(self, small_corpus):
        with pytest.raises(ValueError, match="max_seq_len"):
            pretrain_run(tiny_config("decoder_only"), small_corpus, PretrainObjective("causal_lm"), 1)

    def test_loss_csv(self, small_corpus, tmp_path):
        c = tiny_config("decoder_only", max_seq_len=66)
        res = pretrain_run(c, small_corpus, PretrainObjective("causal_lm"), 3, PretrainHyper(batch_size=2),
                           out_dir=tmp_path)
        assert read_loss_csv(tmp_path / "loss.csv") == res.losses
        assert (tmp_path / "loss.csv").read_text().splitlines()[0] == "step,loss"

    def test_causal_loss_decreases(self):
        corpus = gen_corpus(CorpusSpec(n_sequences=2000, seed=0))
        res = pretrain_run(preset("mini-small", "decoder_only"), corpus, PretrainObjective("causal_lm"), 500,
                           PretrainHyper(seed=0))
        first, last = res.window_means(100)
        assert last < first
