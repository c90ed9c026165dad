"""Compiled matmul kernel versus the NumPy fallback.

Times ``matmul_into`` at the shapes the toy denoiser actually uses, then one
full denoiser forward pass under each backend, and checks that both
backends agree bitwise on every case.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--number 200]
"""

import argparse
import timeit

import numpy as np

from conceptinc import numkit as nk
from conceptinc.numkit import _fallback, backend
from conceptinc.toyldm import ModelConfig, PromptSpec, Vocabulary, denoiser_forward, encode_prompt, init_weights

# (label, m, k, n): rows are batch x pixels for the per-pixel projections
SHAPES = [
    ("attention q/k/v (64x16 @ 16x16)", 64, 16, 16),
    ("lora delta (16x4 @ 4x16)", 16, 4, 16),
    ("mlp up (1024x16 @ 16x64)", 1024, 16, 64),
    ("time mlp (1x1024 @ 1024x64)", 1, 1024, 64),
    ("square 128", 128, 128, 128),
]


def best(stmt, repeat, number):
    return min(timeit.repeat(stmt, repeat=repeat, number=number)) / number


def bench_matmul(repeat, number):
    rng = np.random.default_rng(0)
    rows = []
    for label, m, k, n in SHAPES:
        a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
        out_c, out_py = np.empty((m, n)), np.empty((m, n))
        reps = max(1, number * 64 // max(m * k * n // 256, 1))
        t_py = best(lambda: _fallback.matmul_into(a, b, out_py), repeat, reps)
        if backend.NAME == "compiled":
            from conceptinc.numkit import _kernels

            t_c = best(lambda: _kernels.matmul_into(a, b, out_c), repeat, reps)
            same = np.array_equal(out_c, out_py)
        else:
            t_c, same = float("nan"), True
        rows.append((label, t_c, t_py, same))
    return rows


def bench_forward(repeat, number):
    cfg = ModelConfig()
    rng = nk.Rng(0)
    vocab = Vocabulary(cfg.dim, rng)
    weights = init_weights(cfg, rng).freeze()
    z = np.random.default_rng(1).normal(size=(4, cfg.height, cfg.width, cfg.channels))
    emb = encode_prompt(PromptSpec.parse("a red blob at top"), vocab, {}, cfg.layers, cfg.max_tokens)
    results, outputs = {}, {}
    names = ["python"] + (["compiled"] if backend.NAME == "compiled" else [])
    start = backend.active()
    try:
        for name in names:
            backend.use(name)
            outputs[name] = denoiser_forward(z, 50, emb, weights)
            results[name] = best(lambda: denoiser_forward(z, 50, emb, weights), repeat, max(1, number // 20))
    finally:
        backend.use(start)
    same = len(outputs) < 2 or outputs["python"].tobytes() == outputs["compiled"].tobytes()
    return results, same


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--number", type=int, default=200)
    args = p.parse_args()

    print(f"active backend at import: {backend.NAME}")
    print(f"{'case':40s} {'compiled':>12s} {'fallback':>12s} {'speedup':>8s}  bitwise")
    for label, t_c, t_py, same in bench_matmul(args.repeat, args.number):
        speed = t_py / t_c if t_c == t_c else float("nan")
        print(f"{label:40s} {t_c * 1e6:10.2f}us {t_py * 1e6:10.2f}us {speed:7.2f}x  {'yes' if same else 'NO'}")
    times, same = bench_forward(args.repeat, args.number)
    t_c = times.get("compiled", float("nan"))
    t_py = times["python"]
    print(f"{'denoiser forward (batch 4, default model)':40s} {t_c * 1e3:10.3f}ms {t_py * 1e3:10.3f}ms "
          f"{t_py / t_c:7.2f}x  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
