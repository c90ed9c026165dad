"""Inference: prompt-weighted delta merging, region conditions and guided sampling."""

from .merge import MergeReport, ewa_merge, psi_normalize, semantic_relation, task_embeddings, weighted_deltas
from .regions import (ATTENTION_KINDS, RegionCondition, apply_regions, check_box, region_mask,
                      regional_cross_attention)
from .sampler import (GuidanceConfig, SampleResult, aggregate_noise, ancestral_step, guided,
                      region_noise_estimate, sample, timestep_grid)

__all__ = [
    "ATTENTION_KINDS", "GuidanceConfig", "MergeReport", "RegionCondition", "SampleResult", "aggregate_noise",
    "ancestral_step", "apply_regions", "check_box", "ewa_merge", "guided", "psi_normalize", "region_mask",
    "region_noise_estimate", "regional_cross_attention", "sample", "semantic_relation", "task_embeddings",
    "timestep_grid", "weighted_deltas",
]
