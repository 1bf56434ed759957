"""skexport: torch-trained conv/residual reference models exported to the
spikekit model format, with cross-implementation verification."""

from .recipes import ExportRecipe, Residual, build_net, load_digits_split
from .export import (
    ExportError,
    VerifyError,
    export_model,
    graph_from_torch,
    train_net,
    verify_roundtrip,
)

__version__ = "0.1.0"
