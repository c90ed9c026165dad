import numpy as np

from ..errors import NumericError


def finite_diff(loss_fn, param, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` at ``param``, one coordinate at a time."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(param, dtype=np.float64, copy=True)
    out = np.empty_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(loss_fn(x))
        flat[i] = orig - step
        down = float(loss_fn(x))
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"non-finite loss while probing coordinate {i}")
        gflat[i] = (up - down) / (2.0 * step)
    return out


def max_rel_error(a, b, floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|, floor), the figure gradient checks compare."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def rel_error(a, b, floor: float = 1e-12) -> float:
    """``||a-b|| / max(||a||, ||b||)``: one figure for a whole gradient, robust to near-zero entries."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return float(np.linalg.norm(a - b)) / denom
