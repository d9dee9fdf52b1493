"""High-order dynamic Chebyshev graph convolution with multi-vote cross-attention."""

from .graph import Graph, SparseAdjacency, normalize_adjacency, spmm
from .model import HDGCN, HDGCNConfig
from .mvcattn import AttentionTrace, MVCAttnWeights, mvc_attention
from .optim import TrainConfig, adabelief_step, train
from .tensor import Parameter, Tape, Tensor, backward, grad_check

__all__ = [
    "Graph",
    "SparseAdjacency",
    "normalize_adjacency",
    "spmm",
    "HDGCN",
    "HDGCNConfig",
    "AttentionTrace",
    "MVCAttnWeights",
    "mvc_attention",
    "TrainConfig",
    "adabelief_step",
    "train",
    "Parameter",
    "Tape",
    "Tensor",
    "backward",
    "grad_check",
]
