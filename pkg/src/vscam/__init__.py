"""vscam: vertex-semantic class activation mapping for vision graph networks.

Core library plus a FastAPI service (vscam.service) and a thin CLI client
(vscam.cli).
"""

from .cam import (
    Heatmap,
    ProbeMapSet,
    SemanticBaseMap,
    compose_vscam,
    compute_probe_maps,
    compute_semantic_base,
    gradcam,
    topology_map,
)
from .graph import PatchGraph, aggregate_max_relative, aggregate_mean, knn_edges, pairwise_distance
from .model import (
    ViGConfig,
    ViGModel,
    desk_config,
    init_random,
    model_forward,
    train_step,
    vig_ti_config,
)
from .pipeline import generate_heatmap
from .tensor import Tape, Tensor
from .weights_io import load_weights, save_weights

__version__ = "0.1.0"
