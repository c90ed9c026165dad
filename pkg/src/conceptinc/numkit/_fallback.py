"""Pure NumPy kernels replaying the compiled accumulation order."""

import numpy as np


def matmul_into(a, b, out):
    out[...] = 0.0
    for p in range(a.shape[1]):
        out += a[:, p : p + 1] * b[p : p + 1, :]


def bmm_into(a, b, out):
    out[...] = 0.0
    for p in range(a.shape[2]):
        out += a[:, :, p : p + 1] * b[:, p : p + 1, :]
