"""Detector workbench: area/tiled attention kernels, a small anchor-free
detector, synthetic data and detection metrics."""

from ._core import (
    Detection,
    GroundTruthBox,
    Model,
    area_attention,
    attention_cost,
    decode,
    iou,
    mean_average_precision,
    nms,
    sdpa,
    synth_dataset,
    tiled_attention,
)

__all__ = [
    "Detection",
    "GroundTruthBox",
    "Model",
    "area_attention",
    "attention_cost",
    "decode",
    "iou",
    "mean_average_precision",
    "nms",
    "sdpa",
    "synth_dataset",
    "tiled_attention",
]
