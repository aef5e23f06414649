import json
import subprocess
import sys

import pytest

from xlab.cli import EXIT_DATA, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, main
from xlab.experiments import matrix_preset, run_matrix


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A listops dataset and a three-step decoder checkpoint made through the CLI."""
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--task", "listops", "--seed", "1", "--out", str(d / "listops"),
                 "--n-train", "40", "--n-val", "10", "--n-test", "10"]) == EXIT_OK
    assert main(["pretrain", "--arch", "decoder_only", "--seed", "0", "--steps", "3", "--corpus-sequences", "40",
                 "--batch-size", "4", "--out", str(d / "pre")]) == EXIT_OK
    return d


class TestCommands:
    def test_gen_data_files(self, workdir):
        names = sorted(p.name for p in (workdir / "listops").iterdir())
        assert names == ["classes.txt", "test.tsv", "train.tsv", "val.tsv"]
        assert len((workdir / "listops" / "train.tsv").read_text().splitlines()) == 40

    def test_gen_corpus(self, tmp_path):
        assert main(["gen-data", "--task", "corpus", "--seed", "2", "--n-train", "15", "--out", str(tmp_path)]) == 0
        assert len((tmp_path / "corpus.txt").read_text().splitlines()) == 15

    def test_pretrain_outputs(self, workdir):
        assert (workdir / "pre" / "model.ckpt").exists()
        assert len((workdir / "pre" / "loss.csv").read_text().splitlines()) == 4

    def test_finetune_logs_fraction(self, workdir, capsys):
        out = workdir / "ft"
        code = main(["finetune", "--checkpoint", str(workdir / "pre" / "model.ckpt"), "--data",
                     str(workdir / "listops"), "--policy", "frozen_ln_head", "--seed", "3", "--steps", "4",
                     "--batch-size", "4", "--eval-every", "2", "--out", str(out)])
        assert code == EXIT_OK
        log = capsys.readouterr().out
        assert "trainable fraction" in log and "head.out" in log and "embed.tok" not in log.split("trainable parameters")[1]
        result = json.loads((out / "result.json").read_text())
        assert result["policy"] == "frozen_ln_head" and 0 < result["trainable_fraction"] < 0.06
        assert len((out / "metrics.csv").read_text().splitlines()) == 3

        assert main(["eval", "--checkpoint", str(out / "model.ckpt"), "--data", str(workdir / "listops")]) == 0
        assert "test loss" in capsys.readouterr().out

    def test_eval_needs_fine_tuned_head(self, workdir):
        code = main(["eval", "--checkpoint", str(workdir / "pre" / "model.ckpt"), "--data", str(workdir / "listops")])
        assert code == EXIT_USAGE

    def test_scratch_finetune(self, workdir, tmp_path):
        code = main(["finetune", "--checkpoint", "scratch", "--arch", "encoder_only", "--data",
                     str(workdir / "listops"), "--seed", "1", "--steps", "2", "--batch-size", "2",
                     "--out", str(tmp_path)])
        assert code == EXIT_OK
        assert json.loads((tmp_path / "result.json").read_text())["pathway"] == "reinit"

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_code(self, workdir, tmp_path):
        code = main(["finetune", "--checkpoint", str(workdir / "pre" / "model.ckpt"), "--data",
                     str(workdir / "listops"), "--seed", "1", "--steps", "5", "--lr", "1e30", "--batch-size", "4",
                     "--out", str(tmp_path)])
        assert code == EXIT_DIVERGED

    def test_report_table_t6(self, tmp_path, capsys):
        run_matrix(matrix_preset("single"), tmp_path, log=lambda m: None)
        assert main(["report", "--out", str(tmp_path), "--table", "T6"]) == EXIT_OK
        text = capsys.readouterr().out
        for label in ("T5-Small", "Frozen T5-Small", "FPT", "Scratch Trans."):
            assert f"| {label} |" in text
        assert "Protein" in text and "Listops" in text
        assert main(["report", "--out", str(tmp_path), "--table", "T7", "--format", "csv"]) == EXIT_OK
        assert capsys.readouterr().out.startswith("row,listops_mini")

    def test_matrix_command(self, tmp_path, capsys):
        code = main(["matrix", "--preset", "single", "--seed", "7", "--out", str(tmp_path)])
        assert code == EXIT_OK
        assert (tmp_path / "report.csv").exists()
        assert "1 cells" in capsys.readouterr().out


class TestErrors:
    def test_seed_is_mandatory(self, tmp_path, capsys):
        assert main(["gen-data", "--task", "image", "--out", str(tmp_path)]) == EXIT_USAGE
        assert "--seed is required" in capsys.readouterr().err
        assert main(["matrix", "--preset", "single", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_unknown_config_key_lists_valid(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# comment\nseed = 1\nlearning_rate = 3\n")
        assert main(["gen-data", "--config", str(cfg), "--task", "image", "--out", str(tmp_path)]) == EXIT_USAGE
        err = capsys.readouterr().err
        assert "unknown key 'learning_rate'" in err and "n_train" in err

    def test_config_then_flags(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("task = image\nseed = 4\nn-train = 7   # inline comment\nn_val = 2\nn_test = 2\n")
        assert main(["gen-data", "--config", str(cfg), "--n-train", "5", "--out", str(tmp_path / "img")]) == 0
        assert len((tmp_path / "img" / "train.tsv").read_text().splitlines()) == 5

    def test_bad_value(self, tmp_path):
        assert main(["gen-data", "--task", "image", "--seed", "x", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_unknown_flag_and_no_command(self):
        assert main(["gen-data", "--bogus", "1"]) == EXIT_USAGE
        assert main([]) == EXIT_USAGE

    def test_data_error(self, tmp_path, workdir):
        (tmp_path / "bad.ckpt").write_bytes(b"garbage")
        code = main(["finetune", "--checkpoint", str(tmp_path / "bad.ckpt"), "--data", str(workdir / "listops"),
                     "--seed", "1", "--out", str(tmp_path / "o")])
        assert code == EXIT_DATA

    def test_incompatible_objective(self, tmp_path):
        code = main(["pretrain", "--arch", "encoder_only", "--objective", "causal_lm", "--seed", "0",
                     "--steps", "1", "--corpus-sequences", "5", "--out", str(tmp_path)])
        assert code == EXIT_USAGE

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "xlab", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        for cmd in ("gen-data", "pretrain", "finetune", "eval", "matrix", "report"):
            assert cmd in proc.stdout
