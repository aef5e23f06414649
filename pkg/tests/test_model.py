import struct
import zlib

import numpy as np
import pytest

from xlab.model import (AttentionError, CheckpointCorruptError, CheckpointFormatError, CheckpointTruncatedError,
                        CheckpointVersionError, ConfigError, ModelConfig, UnknownParameterError, VocabularyError,
                        attention, build_model, checkpoint_bytes, checkpoint_from_bytes, forward, load_checkpoint,
                        narrow_head, param_count, param_shapes, preset, save_checkpoint)
from xlab.tensor import Tape, Tensor, grad_check_params, ops, precision
from xlab.vocab import VOCAB

from conftest import tiny_config


def _closed_form_count(c: ModelConfig) -> int:
    d, f = c.d_model, c.d_ff
    block = 4 * d + 4 * d * d + d * f + f + f * d + d
    emb = c.vocab_size * d + c.max_seq_len * d
    head = 0 if c.tie_output_embeddings else d * c.head_width
    if c.arch == "encoder_decoder":
        dec_block = block + 4 * d * d + 2 * d
        return emb + c.n_blocks * (block + dec_block) + 4 * d + head
    return emb + c.n_blocks * block + 2 * d + head


class TestConfig:
    def test_heads_must_divide(self):
        with pytest.raises(ConfigError, match="divisible"):
            ModelConfig("encoder_only", d_model=10, n_heads=3, n_blocks=1, d_ff=4)

    def test_unknown_arch(self):
        with pytest.raises(ConfigError):
            ModelConfig("rnn", 8, 2, 1, 8)

    def test_presets(self):
        assert preset("mini-base", "encoder_only").d_model == 64
        c = preset("mini-small", "decoder_only")
        assert (c.d_model, c.n_heads, c.n_blocks, c.d_ff) == (32, 2, 2, 128)
        with pytest.raises(ConfigError):
            preset("huge", "decoder_only")

    def test_dict_round_trip(self):
        c = tiny_config("encoder_decoder", head_tokens=(37, 38))
        assert ModelConfig.from_dict(c.to_dict()) == c


class TestParameters:
    @pytest.mark.parametrize("arch", ["encoder_only", "decoder_only", "encoder_decoder"])
    @pytest.mark.parametrize("size", ["mini-small", "mini-base"])
    def test_count_matches_closed_form(self, arch, size):
        c = preset(size, arch)
        assert param_count(c) == _closed_form_count(c)

    def test_tied_head_omits_head_out(self):
        c = tiny_config("decoder_only", tie_output_embeddings=True)
        assert "head.out" not in dict(param_shapes(c))
        assert param_count(c) == _closed_form_count(c)

    def test_names_follow_scheme(self):
        names = [n for n, _ in param_shapes(tiny_config("encoder_decoder"))]
        assert names[:2] == ["embed.tok", "embed.pos"]
        assert "enc.block.0.attn.wq" in names and "dec.block.0.xattn.wo" in names
        assert "dec.block.0.ln3.gain" in names and "enc.block.0.ln3.gain" not in names
        assert names[-1] == "head.out"

    def test_init_statistics(self):
        m = build_model(preset("mini-base", "encoder_only"), rng_seed=0)
        assert (m["block.0.ln1.gain"].data == 1).all() and (m["block.0.ln1.bias"].data == 0).all()
        assert (m["block.0.ff.b1"].data == 0).all()
        assert m["embed.tok"].data.std() == pytest.approx(0.02, rel=0.05)

    def test_seeded_build_is_deterministic(self, arch):
        a = build_model(tiny_config(arch), 5)
        b = build_model(tiny_config(arch), 5)
        assert all(np.array_equal(a[n].data, b[n].data) for n in a)


class TestForward:
    def test_shapes(self, tiny_model):
        out = forward(tiny_model, np.arange(37, 43))
        assert out.logits.shape[-1] == 512
        if tiny_model.config.arch == "encoder_decoder":
            assert out.states.shape == (1, 8)
            assert out.memory.shape == (6, 8)
        else:
            assert out.states.shape == (6, 8)

    def test_token_out_of_vocab_names_position(self, tiny_model):
        with pytest.raises(VocabularyError, match=r"position \(0, 2\)"):
            forward(tiny_model, [37, 38, 9999])

    def test_too_long(self, tiny_model):
        with pytest.raises(ConfigError, match="max_seq_len"):
            forward(tiny_model, np.full(25, 37))

    def test_causal_prefix_invariance(self, rng):
        m = build_model(tiny_config("decoder_only"), 1)
        toks = rng.integers(37, 512, size=12)
        base = forward(m, toks).logits.data
        changed = toks.copy()
        changed[7:] = rng.integers(37, 512, size=5)
        assert np.array_equal(forward(m, changed).logits.data[:7], base[:7])

    def test_encoder_is_bidirectional(self, rng):
        m = build_model(tiny_config("encoder_only"), 1)
        toks = rng.integers(37, 512, size=8)
        changed = toks.copy()
        changed[-1] = toks[-1] + 1 if toks[-1] < 511 else 37
        assert not np.allclose(forward(m, toks).states.data[0], forward(m, changed).states.data[0])

    def test_right_padding_matches_unpadded(self, tiny_model, rng):
        a = rng.integers(37, 512, size=5)
        b = rng.integers(37, 512, size=9)
        batch = np.zeros((2, 9), dtype=np.int64)
        batch[0, :5], batch[1] = a, b
        out = forward(tiny_model, batch, lengths=[5, 9]).states.data
        single = forward(tiny_model, a).states.data
        rows = 1 if tiny_model.config.arch == "encoder_decoder" else 5
        np.testing.assert_allclose(out[0, :rows], single[:rows], atol=1e-5)

    def test_attention_masks(self, rng):
        q = Tensor(rng.standard_normal((4, 3)), dtype=np.float64)
        k = Tensor(rng.standard_normal((4, 3)), dtype=np.float64)
        v = Tensor(np.eye(4), dtype=np.float64)
        w = attention(q, k, v, "causal").data
        assert np.allclose(np.triu(w, 1), 0) and np.allclose(w.sum(1), 1)
        keep = np.ones((4, 4), dtype=bool)
        keep[2] = False
        with pytest.raises(AttentionError):
            attention(q, k, v, keep)

    def test_narrow_head_is_restricted_argmax(self, tiny_model, rng):
        toks = rng.integers(37, 512, size=6)
        classes = VOCAB.ids_of([str(i) for i in range(10)])
        full = forward(tiny_model, toks).logits.data
        narrow = forward(narrow_head(tiny_model, classes), toks).logits.data
        np.testing.assert_array_equal(narrow, full[..., list(classes)])


class TestModelGradients:
    def test_one_block_model_loss(self, arch):
        with precision(np.float64):
            c = tiny_config(arch, d_model=4, d_ff=8, vocab_size=12, max_seq_len=6)
            m = build_model(c, 0, dtype=np.float64)
        rng = np.random.default_rng(0)
        for p in m.params.values():  # break the symmetric init so every path carries gradient
            p.data[...] = rng.standard_normal(p.shape) * 0.5
        toks = np.array([[1, 4, 7, 2], [3, 3, 9, 0]])
        targets = np.array([2, 5, 1, 7, 0, 3, 11, 4]) if arch != "encoder_decoder" else np.array([2, 5])

        def loss():
            out = forward(m, toks, lengths=[4, 3])
            lg = out.logits
            return ops.cross_entropy(ops.reshape(lg, (-1, lg.shape[-1])), targets)

        errors = grad_check_params(loss, m.params)
        assert max(errors.values()) < 1e-4, {k: v for k, v in errors.items() if v >= 1e-4}


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tiny_model, tmp_path, rng):
        path = tmp_path / "m.ckpt"
        save_checkpoint(tiny_model, path)
        loaded = load_checkpoint(path)
        assert loaded.config == tiny_model.config
        toks = rng.integers(37, 512, size=7)
        assert np.array_equal(forward(loaded, toks).logits.data, forward(tiny_model, toks).logits.data)
        assert not (tmp_path / "m.ckpt.tmp").exists()

    def test_bad_magic(self, tiny_model):
        buf = bytearray(checkpoint_bytes(tiny_model))
        buf[:8] = b"NOTACKPT"
        with pytest.raises(CheckpointFormatError):
            checkpoint_from_bytes(bytes(buf))

    def test_version(self, tiny_model):
        buf = bytearray(checkpoint_bytes(tiny_model))
        buf[8:12] = struct.pack("<I", 99)
        with pytest.raises(CheckpointVersionError):
            checkpoint_from_bytes(bytes(buf))

    def test_truncated(self, tiny_model):
        buf = checkpoint_bytes(tiny_model)
        with pytest.raises(CheckpointTruncatedError):
            checkpoint_from_bytes(buf[:-10])
        with pytest.raises(CheckpointTruncatedError):
            checkpoint_from_bytes(buf[:5])

    def test_corrupt(self, tiny_model):
        buf = bytearray(checkpoint_bytes(tiny_model))
        buf[-3] ^= 0xFF
        with pytest.raises(CheckpointCorruptError):
            checkpoint_from_bytes(bytes(buf))

    def test_unknown_parameter(self, tiny_model):
        buf = checkpoint_bytes(tiny_model)
        payload = bytearray(buf[24:])
        i = payload.find(b"embed.pos")
        payload[i:i + 9] = b"embed.xyz"
        header = struct.pack("<8sIIQ", b"XLABCKPT", 1, zlib.crc32(bytes(payload)), len(payload))
        with pytest.raises(UnknownParameterError):
            checkpoint_from_bytes(header + bytes(payload))
