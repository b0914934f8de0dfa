"""Context-aware deep kernel maps with learned spatial context."""

from .grid import GridSpec, AdjacencySet, build_adjacency, sector_of
from .featio import (
    ImageFeatures,
    FeatureSet,
    LabelMatrix,
    phi0_linear,
    phi0_hi,
    load_features,
    read_feature_file,
    write_feature_file,
    read_labels,
    write_labels,
    gen_synthetic,
)
from .kernelcore import (
    ContextStack,
    MapStack,
    map_dims,
    forward_map,
    forward_batch,
    pooled_maps,
    gram_fixed_point,
    convolution_kernel,
)
from .svm import SvmModel, train, score, annotate
from .ctxlearn import (
    ContextGradient,
    LearnConfig,
    TrainState,
    loss_and_grad_pooled,
    backward_context,
    alternate_optimize,
)
from .evalmetrics import EvalReport, evaluate

__version__ = "0.1.0"
