"""Shared subspace ``W_*`` and per-task projections ``H_i`` with their descent step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import numkit as nk
from ..adapters.fileformat import read_container, to_stored_precision, write_container
from ..errors import IntegrityError, NumericError, StateError

INIT_STD = 0.02


@dataclass
class SharedSubspace:
    wstar: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)
    H: dict[int, dict[tuple[int, str], np.ndarray]] = field(default_factory=dict)

    @property
    def initialized(self) -> bool:
        return bool(self.wstar)

    def projection(self, task_id: int):
        try:
            return self.H[task_id]
        except KeyError:
            raise StateError(f"no projection H for task {task_id}") from None

    def ensure(self, shapes: dict[tuple[int, str], tuple[int, int]], task_ids, rng: nk.Rng) -> None:
        """Create ``W_*`` and any missing ``H_i`` from seeded N(0, 0.02^2); existing ones are kept."""
        rng = rng.child("subspace")
        if not self.wstar:
            self.wstar = {k: to_stored_precision(rng.child("wstar", str(k[0]), k[1]).normal(s, std=INIT_STD))
                          for k, s in sorted(shapes.items())}
        for i in task_ids:
            if i not in self.H:
                self.H[i] = {k: to_stored_precision(rng.child("H", str(i), str(k[0]), k[1]).normal((s[0], s[0]), std=INIT_STD))
                             for k, s in sorted(shapes.items())}

    def copy(self) -> "SharedSubspace":
        return SharedSubspace({k: v.copy() for k, v in self.wstar.items()},
                              {i: {k: v.copy() for k, v in h.items()} for i, h in self.H.items()})

    def finalize(self) -> "SharedSubspace":
        self.wstar = {k: to_stored_precision(v) for k, v in self.wstar.items()}
        self.H = {i: {k: to_stored_precision(v) for k, v in h.items()} for i, h in self.H.items()}
        return self

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"wstar.l{l}.{p}": v for (l, p), v in self.wstar.items()}
        for i, h in self.H.items():
            out.update({f"H.{i}.l{l}.{p}": v for (l, p), v in h.items()})
        return out


def r2_gradients(subspace: SharedSubspace, deltas):
    """Analytic gradients of the shared-subspace penalty.

    Returns ``(dH, dW)`` where ``dH[i][key] = -2 (dW_i - H_i W_*) W_*^T`` and
    ``dW[key] = sum_i -2 H_i^T (dW_i - H_i W_*)``.
    """
    dH, dW = {}, {}
    for i in sorted(deltas):
        H = subspace.projection(i)
        dH[i] = {}
        for key in sorted(deltas[i]):
            W = subspace.wstar[key]
            resid = deltas[i][key] - nk.matmul(H[key], W)
            dH[i][key] = -2.0 * nk.matmul(resid, np.ascontiguousarray(W.T))
            g = -2.0 * nk.matmul(np.ascontiguousarray(H[key].T), resid)
            dW[key] = dW[key] + g if key in dW else g
    return dH, dW


def shared_subspace_step(subspace: SharedSubspace, deltas, eta: float) -> SharedSubspace:
    """One descent update: every ``H_i`` first (at the current ``W_*``), then ``W_*`` at the new ``H``.

    Descent means ``X - eta * grad``; the written update rule adds the
    gradient, which would increase the penalty.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    out = subspace.copy()
    dH, _ = r2_gradients(subspace, deltas)
    for i, grads in dH.items():
        for key, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for H[{i}]{key}")
            out.H[i][key] = out.H[i][key] - eta * g
    _, dW = r2_gradients(out, deltas)
    for key, g in dW.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for W_*{key}")
        out.wstar[key] = out.wstar[key] - eta * g
    return out


def _key(name: str):
    lname, proj = name.split(".")[-2:]
    return int(lname[1:]), proj


def save_subspace(subspace: SharedSubspace, path, config_hash: str = "") -> int:
    meta = {"kind": "shared-subspace", "config_hash": config_hash,
            "tasks": ",".join(str(i) for i in sorted(subspace.H))}
    return write_container(path, meta, subspace.tensors())


def load_subspace(path) -> SharedSubspace:
    meta, tensors = read_container(path)
    if meta.get("kind") != "shared-subspace":
        raise IntegrityError(f"{path} is not a shared subspace", "kind")
    sub = SharedSubspace()
    for name, arr in tensors.items():
        if name.startswith("wstar."):
            sub.wstar[_key(name)] = arr
        elif name.startswith("H."):
            task = int(name.split(".")[1])
            sub.H.setdefault(task, {})[_key(name)] = arr
    sub.wstar = dict(sorted(sub.wstar.items()))
    return sub
