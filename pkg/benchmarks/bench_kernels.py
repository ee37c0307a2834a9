"""Benchmark the compiled kernels against the numpy implementations.

Run:  python3 benchmarks/bench_kernels.py [--repeats N]

Times the four hot kernels at desk-scale and larger sizes, plus one
teacher-forced training step of the full model under each backend.
The compiled loops win on small operands where call overhead dominates;
numpy's BLAS-backed matmul takes over as sizes grow.
"""

import argparse
import os
import sys
import time

import numpy as np

from figcap.kernels import available_backends, load_backend


def best_of(fn, repeats, inner=10):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def bench_kernels(backends, repeats):
    rng = np.random.default_rng(0)
    sizes = [8, 32, 128, 512]
    rows = []
    for n in sizes:
        a = rng.standard_normal((n, n))
        b = rng.standard_normal((n, n))
        x = rng.standard_normal((n, n))
        gain = rng.standard_normal(n)
        bias = rng.standard_normal(n)
        cases = {
            "matmul": lambda impl, a=a, b=b: impl.matmul(a, b),
            "sigmoid": lambda impl, x=x: impl.sigmoid(x),
            "tanh": lambda impl, x=x: impl.tanh(x),
            "softmax_rows": lambda impl, x=x: impl.softmax_rows(x),
            "layer_norm_rows": lambda impl, x=x, g=gain, c=bias:
                impl.layer_norm_rows(x, g, c, 1e-5),
        }
        for op, fn in cases.items():
            timings = {name: best_of(lambda impl=impl: fn(impl), repeats)
                       for name, impl in backends.items()}
            rows.append((op, n, timings))
    return rows


def bench_train_step(backend_names, repeats):
    """One forward/backward/update on a small model per backend (subprocess-free)."""
    results = {}
    for name in backend_names:
        os.environ["FIGCAP_KERNELS"] = name
        for mod in [m for m in list(sys.modules) if m.startswith("figcap")]:
            del sys.modules[mod]
        from figcap import data as D
        from figcap.features import FeatureSource
        from figcap.model import ModelConfig, init_parameters
        from figcap.train import OptimizerConfig, apply_sgd_step, clip_gradients, compute_loss
        from figcap import tensor as T

        records = [D.ScicapRecord(id=f"r{i}", figure_text=f"series {i} level",
                                  abstract="signal trend study",
                                  caption=f"series {i} rises over time",
                                  feature_ref=f"r{i}") for i in range(8)]
        vocab = D.build_vocab(records, min_freq=1, max_size=200)
        config = ModelConfig(vocab_size=len(vocab), max_caption_len=12, d_clip=64,
                             k=4, d_model=32, d_attn=64, d_fuse=128, fusion_layers=1,
                             heads=2, d_hidden=64).validate()
        examples = D.tokenize_records(records, vocab, config.max_caption_len)
        features = FeatureSource("toy", config.d_clip, seed=0)
        params = init_parameters(config, seed=0)
        batch = D.batch(examples, batch_size=8, seed=0)[0]
        lrs = {"encoders": 1e-4, "fusion": 5e-5, "decoder": 5e-4}

        def step():
            params.zero_grad()
            loss = compute_loss(batch, params, config, features)
            T.backward(loss)
            clip_gradients(params, 5.0)
            apply_sgd_step(params, lrs, 1e-5)

        step()  # warm up
        results[name] = best_of(step, repeats, inner=3)
    os.environ.pop("FIGCAP_KERNELS", None)
    return results


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    names = available_backends()
    backends = {name: load_backend(name) for name in names}
    print(f"backends: {', '.join(names)}\n")

    rows = bench_kernels(backends, args.repeats)
    header = f"{'kernel':<16} {'size':>5} " + " ".join(f"{n:>12}" for n in names)
    if len(names) == 2:
        header += f" {'ratio':>8}"
    print(header)
    print("-" * len(header))
    for op, n, timings in rows:
        line = f"{op:<16} {n:>5} " + " ".join(f"{timings[b] * 1e6:>10.1f}us" for b in names)
        if len(names) == 2:
            a, b = (timings[names[0]], timings[names[1]])
            line += f" {b / a:>7.2f}x"
        print(line)

    print("\nfull train step (16-record desk-scale model):")
    for name, seconds in bench_train_step(names, args.repeats).items():
        print(f"  {name:>8}: {seconds * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
