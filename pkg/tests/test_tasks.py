import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xlab.tasks import TASKS, TaskData, build_task, dataset_load, dataset_save, default_spec
from xlab.tasks.dataset import DatasetFormatError, Sample
from xlab.tasks.image import (CLASS_NAMES, ImageDataError, ImageTaskSpec, PGMFormatError, image_flatten_quantize,
                              load_pgm, nearest_template_classify, quantize, save_pgm, synth_image_sample, template,
                              unflatten)
from xlab.tasks.listops import (EASY, MEDIUM, ListopsParseError, ListopsSpec, ListopsSpecError, apply_op,
                                expression_depth, listops_eval, listops_eval_stack, listops_generate)
from xlab.tasks.protein import (ALPHABET, ProteinDataError, ProteinTaskSpec, load_fasta_like, motif_families,
                                motif_scan_classify, protein_synth_sample, protein_synth_sequence, save_fasta_like)
from xlab.vocab import VOCAB


def _nested_expr():
    leaf = st.integers(0, 9).map(lambda d: [str(d)])
    ops = st.sampled_from(["[MAX", "[MIN", "[MED", "[SUM"])

    def extend(children):
        return st.tuples(ops, st.lists(children, min_size=1, max_size=5)).map(
            lambda t: [t[0]] + [s for c in t[1] for s in c] + ["]"])

    return st.recursive(leaf, extend, max_leaves=30)


class TestListopsEval:
    @pytest.mark.parametrize("expr, value", [
        ("[MAX 0 [MIN 1 4] 3 [SUM 2 7] ]", 9),
        ("7", 7),
        ("[SUM 9 4]", 3),
        ("[MED 1 2 3 4]", 2),
        ("[MED 5 1 9]", 5),
        ("[SM 9 4]", 3),
    ])
    def test_examples(self, expr, value):
        assert listops_eval(expr) == value
        assert listops_eval_stack(expr) == value

    def test_even_median_floors(self):
        assert apply_op("[MED", [3, 4]) == 3
        assert apply_op("[MED", [0, 9, 1, 8]) == 4

    @pytest.mark.parametrize("expr", ["", "[MAX 1 2", "[MAX ]", "1 2", "]", "[FOO 1 ]", "[MIN 1 x ]"])
    def test_malformed(self, expr):
        with pytest.raises(ListopsParseError):
            listops_eval(expr)
        with pytest.raises(ListopsParseError):
            listops_eval_stack(expr)

    def test_error_reports_position(self):
        with pytest.raises(ListopsParseError) as exc:
            listops_eval_stack("[MAX 1 2 ] 3")
        assert exc.value.position == 4

    def test_deep_chain_needs_no_recursion(self):
        depth = 1000
        expr = ["[MAX"] * depth + ["3"] + ["1", "]"] * depth
        assert listops_eval_stack(expr) == 3
        assert expression_depth(expr) == depth

    @settings(max_examples=300, deadline=None)
    @given(_nested_expr())
    def test_dual_oracles_agree(self, expr):
        assert listops_eval(expr) == listops_eval_stack(expr)

    @settings(max_examples=200, deadline=None)
    @given(st.sampled_from(["[MAX", "[MIN", "[MED", "[SUM"]), st.lists(st.integers(0, 9), min_size=1, max_size=9))
    def test_closure(self, op, args):
        v = apply_op(op, args)
        assert 0 <= v <= 9
        if op in ("[MAX", "[MIN"):
            assert v in args
        if op == "[MED":
            assert min(args) <= v <= max(args)


class TestListopsGenerate:
    def test_depth_zero_is_a_digit(self):
        spec = ListopsSpec(max_depth=0, length_range=(1, 1))
        syms, label = listops_generate(spec, np.random.default_rng(0))
        assert len(syms) == 1 and int(syms[0]) == label

    @pytest.mark.parametrize("spec", [EASY, MEDIUM])
    def test_generated_labels_match_evaluator(self, spec):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            syms, label = listops_generate(spec, rng)
            assert label == listops_eval(syms)
            assert spec.length_range[0] <= len(syms) <= spec.length_range[1]
            assert expression_depth(syms) <= spec.max_depth

    def test_ten_thousand_cross_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(10_000):
            syms, _ = listops_generate(EASY, rng)
            assert listops_eval(syms) == listops_eval_stack(syms)

    def test_unreachable_length(self):
        spec = ListopsSpec(max_depth=1, max_arity=2, length_range=(50, 60), max_tries=20)
        with pytest.raises(ListopsSpecError, match="no expression"):
            listops_generate(spec, np.random.default_rng(0))

    def test_bad_spec(self):
        with pytest.raises(ListopsSpecError):
            ListopsSpec(operators=("[XOR",))
        with pytest.raises(ListopsSpecError):
            ListopsSpec(length_range=(5, 2))

    def test_dataset_determinism(self):
        a = build_task("listops", n_train=30, n_val=5, n_test=5, seed=3)
        b = build_task("listops", n_train=30, n_val=5, n_test=5, seed=3)
        assert a.train == b.train and a.test == b.test
        c = build_task("listops", n_train=30, n_val=5, n_test=5, seed=4)
        assert a.train != c.train


class TestImage:
    def test_flatten_example(self):
        toks = image_flatten_quantize(np.array([[0, 255], [128, 64]]), 256)
        assert toks == VOCAB.encode(["<px0>", "<px255>", "<px128>", "<px64>"])

    def test_two_levels_threshold(self):
        toks = image_flatten_quantize(np.array([[0, 127], [128, 255]]), 2)
        assert toks == VOCAB.encode(["<px0>", "<px0>", "<px1>", "<px1>"])

    @pytest.mark.parametrize("n", [1, 3, 8, 16])
    def test_length_is_square(self, n):
        img = np.random.default_rng(n).integers(0, 256, size=(n, n))
        assert len(image_flatten_quantize(img, 16)) == n * n

    def test_out_of_range(self):
        with pytest.raises(ImageDataError):
            image_flatten_quantize(np.array([[0, 256]]), 16)
        with pytest.raises(ImageDataError):
            image_flatten_quantize(np.array([[-1, 3]]), 16)

    def test_unflatten_inverts(self):
        img = np.random.default_rng(0).integers(0, 256, size=(8, 8))
        assert np.array_equal(unflatten(image_flatten_quantize(img, 16), 8), quantize(img, 16))

    def test_noise_free_is_template(self):
        spec = ImageTaskSpec(noise=0.0)
        img = synth_image_sample(CLASS_NAMES.index("horizontal_bar"), spec, np.random.default_rng(0))
        assert np.array_equal(img, template(0, 8))
        assert set(np.unique(img[3])) == {200} and set(np.unique(img[0])) == {50}

    def test_templates_are_distinct(self):
        ts = [template(c, 8).tobytes() for c in range(10)]
        assert len(set(ts)) == 10

    def test_nearest_template_separates_classes(self):
        spec = ImageTaskSpec(noise=0.1)
        rng = np.random.default_rng(0)
        labels = rng.integers(10, size=1000)
        hits = sum(nearest_template_classify(synth_image_sample(int(c), spec, rng), spec) == c for c in labels)
        assert hits / 1000 > 0.9

    def test_pgm_round_trip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, size=(8, 8)).astype(np.uint8)
        save_pgm(img, tmp_path / "a.pgm")
        assert np.array_equal(load_pgm(tmp_path / "a.pgm"), img)

    def test_pgm_comment_in_header(self, tmp_path):
        p = tmp_path / "c.pgm"
        p.write_bytes(b"P5\n# made by hand\n2 2\n255\n" + bytes([1, 2, 3, 4]))
        assert load_pgm(p).tolist() == [[1, 2], [3, 4]]

    @pytest.mark.parametrize("content", [
        b"P2\n2 2\n255\n1 2 3 4",
        b"P5\n2 2\n65535\n" + bytes(8),
        b"P5\n2 2\n255\n" + bytes(2),
        b"P5\n2",
        b"P5\nx 2\n255\n" + bytes(4),
    ])
    def test_malformed_pgm(self, tmp_path, content):
        p = tmp_path / "bad.pgm"
        p.write_bytes(content)
        with pytest.raises(PGMFormatError):
            load_pgm(p)

    def test_pgm_rejects_non_square(self, tmp_path):
        save_pgm(np.zeros((2, 3), dtype=np.uint8), tmp_path / "r.pgm")
        with pytest.raises(PGMFormatError, match="square"):
            load_pgm(tmp_path / "r.pgm")
        assert load_pgm(tmp_path / "r.pgm", require_square=False).shape == (2, 3)


class TestProtein:
    def test_alphabet(self):
        assert len(ALPHABET) == 25 == len(set(ALPHABET))

    def test_families_do_not_nest(self):
        spec = ProteinTaskSpec()
        motifs = [m for fam in motif_families(spec) for m in fam]
        assert all(3 <= len(m) <= 5 for m in motifs)
        assert not any(a != b and a in b for a in motifs for b in motifs)

    def test_noise_free_sample_holds_own_motif(self):
        spec = ProteinTaskSpec()
        fams = motif_families(spec)
        rng = np.random.default_rng(0)
        for c in range(spec.n_classes):
            seq = protein_synth_sequence(c, spec, rng, fams)
            assert any(m in seq for m in fams[c])
            assert set(seq) <= set(ALPHABET)

    def test_motif_scan_recovers_labels(self):
        spec = ProteinTaskSpec()
        fams = motif_families(spec)
        rng = np.random.default_rng(1)
        labels = rng.integers(spec.n_classes, size=1000)
        hits = sum(motif_scan_classify(protein_synth_sequence(int(c), spec, rng, fams), fams) == c for c in labels)
        assert hits == 1000

    def test_class_out_of_range(self):
        with pytest.raises(ValueError):
            protein_synth_sequence(20, ProteinTaskSpec(), np.random.default_rng(0))

    def test_fasta_round_trip(self, tmp_path):
        spec = ProteinTaskSpec(n_classes=5)
        rng = np.random.default_rng(0)
        samples = [protein_synth_sample(i % 5, spec, rng) for i in range(12)]
        save_fasta_like(samples, tmp_path / "p.fa")
        assert load_fasta_like(tmp_path / "p.fa") == samples

    def test_fasta_bad_letter(self, tmp_path):
        (tmp_path / "p.fa").write_text(">s0 class=1\nKSPJLT\n")
        with pytest.raises(ProteinDataError, match="'J'"):
            load_fasta_like(tmp_path / "p.fa")

    @pytest.mark.parametrize("text", [">s0\nKSP\n", ">s0 class=1\n>s1 class=2\nKSP\n", "KSP\n", ">s0 class=x\nK\n"])
    def test_fasta_bad_headers(self, tmp_path, text):
        (tmp_path / "p.fa").write_text(text)
        with pytest.raises(DatasetFormatError):
            load_fasta_like(tmp_path / "p.fa")


class TestDatasets:
    @pytest.mark.parametrize("task", TASKS)
    def test_tsv_round_trip(self, task, tmp_path):
        data = build_task(task, n_train=20, n_val=4, n_test=4, seed=1)
        dataset_save(data.train, tmp_path / "train.tsv")
        assert dataset_load(tmp_path / "train.tsv") == data.train
        data.save(tmp_path / task)
        loaded = TaskData.load(tmp_path / task, task)
        assert loaded.class_tokens == data.class_tokens and loaded.test == data.test

    def test_tsv_byte_format(self, tmp_path):
        dataset_save([Sample(tuple(VOCAB.encode(["[SUM", "9", "4", "]"])), 3)], tmp_path / "d.tsv")
        ids = " ".join(str(i) for i in VOCAB.encode(["[SUM", "9", "4", "]"]))
        assert (tmp_path / "d.tsv").read_bytes() == f"{ids}\t3\n".encode()

    @pytest.mark.parametrize("line, lineno", [("1 2 3\n", 1), ("1 2\t3\n4 x\t1\n", 2), ("1 2\t-1\n", 1)])
    def test_malformed_line_number(self, tmp_path, line, lineno):
        (tmp_path / "d.tsv").write_text(line)
        with pytest.raises(DatasetFormatError) as exc:
            dataset_load(tmp_path / "d.tsv")
        assert exc.value.line == lineno

    def test_label_beyond_classes(self, tmp_path):
        data = build_task("image", n_train=5, n_val=2, n_test=2, n_classes=3)
        data.save(tmp_path)
        (tmp_path / "classes.txt").write_text("37\n")
        with pytest.raises(DatasetFormatError, match="outside"):
            TaskData.load(tmp_path, "image")

    @pytest.mark.parametrize("task", TASKS)
    def test_labels_and_tokens_inside_vocab(self, task):
        data = build_task(task, n_train=50, n_val=5, n_test=5)
        assert all(0 <= s.label < data.n_classes for s in data.train)
        assert all(0 <= t < len(VOCAB) for s in data.train for t in s.tokens)
        assert len(set(data.class_tokens)) == data.n_classes

    def test_image_tokens_are_pixels(self):
        spec = default_spec("image", n_train=20, n_val=2, n_test=2)
        data = build_task("image", spec)
        px = {VOCAB.id(f"<px{i}>") for i in range(spec.levels)}
        assert all(len(s.tokens) == 64 and set(s.tokens) <= px for s in data.train)
