"""Subarray EP detector."""

from .cpm import compute_llr, cpm_denoise, cpm_mrc, hard_decision
from .ep import (
    MODES,
    DetectionOutput,
    DetectorConfig,
    EpState,
    IterationRecord,
    detect,
    run_ep,
    run_hierarchical,
    run_one_feedforward,
    write_trace,
)
from .lpm import direct_sigma, lpm_extrinsic, lpm_lmmse, lpm_prior, recursive_sigma

__all__ = [
    "MODES",
    "DetectionOutput",
    "DetectorConfig",
    "EpState",
    "IterationRecord",
    "compute_llr",
    "cpm_denoise",
    "cpm_mrc",
    "detect",
    "direct_sigma",
    "hard_decision",
    "lpm_extrinsic",
    "lpm_lmmse",
    "lpm_prior",
    "recursive_sigma",
    "run_ep",
    "run_hierarchical",
    "run_one_feedforward",
    "write_trace",
]
