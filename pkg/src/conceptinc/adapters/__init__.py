"""LoRA containers, task learners and their persistence."""

from .fileformat import decode, encode, read_container, to_stored_precision, write_container
from .learner import TaskLearner, init_task_learner, load_learner, save_learner
from .lora import DEFAULT_RANK, LoraLayer, lora_delta
from .store import LearnerStore

__all__ = [
    "DEFAULT_RANK", "LearnerStore", "LoraLayer", "TaskLearner", "decode", "encode", "init_task_learner",
    "load_learner", "lora_delta", "read_container", "save_learner", "to_stored_precision", "write_container",
]
