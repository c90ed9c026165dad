"""Continual concept learning: regularizers, shared subspace and the two-step trainer."""

from .regularizers import r1_orth, r2_shared
from .subspace import (SharedSubspace, load_subspace, r2_gradients, save_subspace,
                       shared_subspace_step)
from .trainer import (Batch, RunLog, TrainConfig, ccl_loss, diffusion_loss, learn_task,
                      learner_leaves, make_batch, probe_batch, task_dataset)

__all__ = [
    "Batch", "RunLog", "SharedSubspace", "TrainConfig", "ccl_loss", "diffusion_loss", "learn_task",
    "learner_leaves", "load_subspace", "make_batch", "probe_batch", "r1_orth", "r2_gradients",
    "r2_shared", "save_subspace", "shared_subspace_step", "task_dataset",
]
