"""acs3d: axial-coronal-sagittal convolutions and 2D-to-3D model conversion.

A 2D convolution kernel bank is split by output channel and applied in the
three orthogonal orientations of a volume, so any 2D network converts into
a natively 3D one that loads the 2D weights unchanged. The package also
ships the 2.5D / inflated / random-3D counterpart converters, an exact
block-sparse 3D-convolution oracle, cost accounting, a minimal
reverse-mode engine, synthetic shape datasets, and a CLI.
"""

from .acs import (AcsKernel, SoftWeights, acs_conv, acs_conv_backward,
                  make_view_kernels, mean_acs_conv, mean_acs_conv_backward,
                  soft_acs_conv, soft_acs_conv_backward, split_channels,
                  view_padding)
from .backend import active_backend, set_backend
from .errors import (ConfigError, DivergenceError, GraphError,
                     OracleSubsetError, ShapeError, WeightFormatError)
from .graph import (LayerNode, ModelGraph, backward_graph, convert_graph,
                    embed_block_sparse, forward_graph, infer_shapes,
                    init_params, load_model, save_model, transfer_weights)
from .ops import ConvConfig, conv, conv_backward, pad, pool3d
from .profiler import CostRecord, CostReport, layer_cost, model_cost
from .weightio import WeightStore, load, save

__version__ = "0.1.0"

__all__ = [
    "AcsKernel", "SoftWeights", "acs_conv", "acs_conv_backward",
    "make_view_kernels", "mean_acs_conv", "mean_acs_conv_backward",
    "soft_acs_conv", "soft_acs_conv_backward", "split_channels", "view_padding",
    "active_backend", "set_backend",
    "ConfigError", "DivergenceError", "GraphError", "OracleSubsetError",
    "ShapeError", "WeightFormatError",
    "LayerNode", "ModelGraph", "backward_graph", "convert_graph",
    "embed_block_sparse", "forward_graph", "infer_shapes", "init_params",
    "load_model", "save_model", "transfer_weights",
    "ConvConfig", "conv", "conv_backward", "pad", "pool3d",
    "CostRecord", "CostReport", "layer_cost", "model_cost",
    "WeightStore", "load", "save",
    "__version__",
]
