"""Command-line driver: sequential learning, sampling, merge inspection and forgetting evaluation."""

from .commands import (METHODS, ForgettingReport, SampleOutput, TaskRecord, cmd_eval_forgetting, cmd_inspect,
                       cmd_learn, cmd_merge_info, cmd_sample, concept_recovery_error, learn_sequence, load_model,
                       open_store, write_report)
from .config import PRESETS, TOY3, TOY10, RunConfig, load_run_config

__all__ = [
    "METHODS", "PRESETS", "TOY3", "TOY10", "ForgettingReport", "RunConfig", "SampleOutput", "TaskRecord",
    "cmd_eval_forgetting", "cmd_inspect", "cmd_learn", "cmd_merge_info", "cmd_sample", "concept_recovery_error",
    "learn_sequence", "load_model", "load_run_config", "open_store", "write_report",
]
