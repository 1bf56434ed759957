"""spikekit: ANN-to-SNN conversion with bistable phase-coded neurons."""

from .errors import (
    ConfigurationError,
    DataFormatError,
    DomainError,
    ModelFormatError,
    ShapeMismatchError,
    SpikekitError,
    ValidationError,
)
from .tensor_ops import (
    bn_forward,
    conv2d_forward,
    dense_forward,
    pool2d_forward,
    relu_forward,
)
from .graph import (
    Layer,
    ModelGraph,
    avgpool2d,
    batchnorm,
    conv2d,
    dense,
    flatten,
    infer_shapes,
    input_layer,
    maxpool2d,
    relu,
    residual,
)
from .model_io import (
    load_bsd,
    load_dataset,
    load_idx_images,
    load_idx_labels,
    load_model,
    save_model,
    write_bsd,
)
from .ann import (
    CalibrationStats,
    annotate_points,
    collect_lambdas,
    fold_batchnorm,
    nearest_rank_quantile,
    normalize_weights,
    residual_scale,
    run_inference,
)
from .snn import (
    BIFUnitState,
    PhaseConfig,
    SimTrace,
    SpikingNetwork,
    accumulating_side,
    bif_step,
    build_snn,
    conservation_residual,
    decode_output,
    decode_phase,
    decode_rate,
    if_step,
    inject_input,
    phase_weight,
    simulate,
    sin_count,
    spiking_maxpool_gate,
)
from .trainer import TrainConfig, TrainingDiverged, grad_check, make_blobs, train_mlp

__version__ = "0.1.0"
