import numpy as np
import pytest

from xlab.model import ModelConfig, build_model


def tiny_config(arch: str, **kw) -> ModelConfig:
    base = dict(d_model=8, n_heads=2, n_blocks=1, d_ff=16, vocab_size=512, max_seq_len=24)
    base.update(kw)
    return ModelConfig(arch=arch, **base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["encoder_only", "decoder_only", "encoder_decoder"])
def arch(request):
    return request.param


@pytest.fixture
def tiny_model(arch):
    return build_model(tiny_config(arch), rng_seed=3)
