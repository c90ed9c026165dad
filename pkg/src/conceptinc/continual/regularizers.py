"""Orthogonality and shared-subspace penalties on LoRA factors.

Both accept plain arrays or recorded nodes for the current task's tensors.
Sums run over sorted (layer, projection) keys so the reduction order is fixed.
"""

from __future__ import annotations

from .. import numkit as nk


def r1_orth(prev_A, cur_A):
    """Entrywise absolute sum of ``A_i @ A_g.T`` over earlier tasks ``i`` and all adapted weights.

    ``prev_A`` is a list (one entry per earlier task) of ``{(layer, proj): A}``;
    ``cur_A`` maps the same keys to the current task's factors. No earlier
    tasks gives 0.
    """
    total = 0.0
    for task_A in prev_A:
        for key in sorted(cur_A):
            inner = nk.matmul(task_A[key], nk.transpose(cur_A[key]))
            total = nk.add(total, nk.sum_(nk.abs_(inner)))
    return total


def r2_shared(deltas, subspace):
    """``sum_i sum_l ||dW_i - H_i W_*||_F^2`` for every task id in ``deltas``.

    ``deltas`` maps task id to ``{(layer, proj): dW}``.
    """
    total = 0.0
    for task_id in sorted(deltas):
        H = subspace.projection(task_id)
        for key in sorted(deltas[task_id]):
            resid = nk.sub(deltas[task_id][key], nk.matmul(H[key], subspace.wstar[key]))
            total = nk.add(total, nk.sum_(nk.square(resid)))
    return total
