"""Proposal-level spatio-temporal context aggregation for video object detection."""
from .attention import stca_backward, stca_forward
from .pipeline import Model, TrainConfig, infer_window, init_model, sample_triplet, train, train_step
from .proposals import BoundingBox, FrameProposals, Proposal, ProposalSet, StcaConfig, StcaParams

__all__ = [
    "BoundingBox",
    "FrameProposals",
    "Model",
    "Proposal",
    "ProposalSet",
    "StcaConfig",
    "StcaParams",
    "TrainConfig",
    "infer_window",
    "init_model",
    "sample_triplet",
    "stca_backward",
    "stca_forward",
    "train",
    "train_step",
]
