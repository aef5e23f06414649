#!/usr/bin/env python3
"""Compare the compiled kernels against the numpy fallback.

Times every fused kernel on shapes typical of the mini presets, checks the
two backends agree, and times one fine-tune step end to end under each
backend (``XLAB_KERNELS`` is read at import, so each backend runs in its
own subprocess).

Usage:
  python3 benchmarks/bench_kernels.py
  python3 benchmarks/bench_kernels.py --repeat 50 --rows 4096
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from xlab.tensor import _npkernels

try:
    from xlab.tensor import _ckernels
except ImportError:
    _ckernels = None

STEP_SNIPPET = r"""
import time
import numpy as np
from xlab.adapt import FinetuneHyper, FinetuneRun, finetune_run
from xlab.model import preset
from xlab.tasks import build_task
from xlab.tensor import kernels

data = build_task("listops", n_train=256, n_val=32, n_test=32, seed=0)
cfg = preset("mini-small", "{arch}", max_seq_len=40)
run = FinetuneRun("scratch", "listops", hyper=FinetuneHyper(steps={steps}, eval_every=10**9), config=cfg)
t0 = time.perf_counter()
finetune_run(run, data)
print(kernels.BACKEND, (time.perf_counter() - t0) / {steps})
"""


def _cases(rows: int, d: int, vocab: int, rng):
    x = rng.standard_normal((rows, d)).astype(np.float32)
    att = rng.standard_normal((rows, 64)).astype(np.float32)
    y = _npkernels.softmax_forward(att)
    gain = np.ones(d, np.float32)
    bias = np.zeros(d, np.float32)
    _, xhat, rstd = _npkernels.layer_norm_forward(x, gain, bias, 1e-5)
    flat = x.reshape(-1).copy()
    logits = rng.standard_normal((rows, vocab)).astype(np.float32)
    targets = rng.integers(vocab, size=rows).astype(np.int64)
    ids = rng.integers(vocab, size=rows).astype(np.int64)
    return {
        "softmax_forward": lambda k: k.softmax_forward(att),
        "softmax_backward": lambda k: k.softmax_backward(y, att),
        "layer_norm_forward": lambda k: k.layer_norm_forward(x, gain, bias, 1e-5),
        "layer_norm_backward": lambda k: k.layer_norm_backward(x, xhat, rstd, gain),
        "gelu_forward": lambda k: k.gelu_forward(flat),
        "gelu_backward": lambda k: k.gelu_backward(flat, flat),
        "cross_entropy_forward": lambda k: k.cross_entropy_forward(logits, targets),
        "scatter_add_rows": lambda k: k.scatter_add_rows(vocab, ids, x),
    }


def _first(out):
    return out[0] if isinstance(out, tuple) else out


def bench_kernels(rows: int, d: int, vocab: int, repeat: int) -> None:
    cases = _cases(rows, d, vocab, np.random.default_rng(0))
    print(f"kernels on {rows} rows, d={d}, vocab={vocab} (best of {repeat}, microseconds)")
    print(f"{'kernel':24s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s} {'max abs diff':>13s}")
    for name, call in cases.items():
        t_np = min(timeit.repeat(lambda: call(_npkernels), number=1, repeat=repeat)) * 1e6
        if _ckernels is None:
            print(f"{name:24s} {t_np:10.1f} {'n/a':>10s}")
            continue
        t_c = min(timeit.repeat(lambda: call(_ckernels), number=1, repeat=repeat)) * 1e6
        diff = float(np.max(np.abs(np.asarray(_first(call(_npkernels))) - np.asarray(_first(call(_ckernels))))))
        print(f"{name:24s} {t_np:10.1f} {t_c:10.1f} {t_np / t_c:7.2f}x {diff:13.2e}")


def bench_step(arch: str, steps: int) -> None:
    print(f"\nfine-tune step, mini-small {arch}, batch 32 (mean of {steps} steps)")
    for backend in ("numpy", "cython"):
        if backend == "cython" and _ckernels is None:
            print(f"{backend:8s} n/a (extension not built)")
            continue
        env = {**os.environ, "XLAB_KERNELS": backend}
        proc = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(arch=arch, steps=steps)],
                              env=env, capture_output=True, text=True, check=True)
        name, secs = proc.stdout.split()
        print(f"{name:8s} {1e3 * float(secs):8.2f} ms/step")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--rows", type=int, default=2048, help="rows per kernel call (batch x sequence)")
    p.add_argument("--d", type=int, default=32, help="feature width")
    p.add_argument("--vocab", type=int, default=512, help="vocabulary size for the loss and scatter kernels")
    p.add_argument("--repeat", type=int, default=30)
    p.add_argument("--steps", type=int, default=30, help="fine-tune steps for the end-to-end timing")
    p.add_argument("--arch", default="encoder_only", choices=("encoder_only", "decoder_only", "encoder_decoder"))
    args = p.parse_args()
    bench_kernels(args.rows, args.d, args.vocab, args.repeat)
    bench_step(args.arch, args.steps)


if __name__ == "__main__":
    main()
