"""Networks that are provably affine on a convex polytope, via per-unit bias shifts."""
from .errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    NonFiniteLossError,
    ParseError,
    PoliceError,
    UnsupportedError,
    ValidationError,
)
from .net import (
    AffinePiece,
    Layer,
    Network,
    compute_shift,
    extract_affine,
    fold_bias,
    forward_police,
    forward_standard,
    jacobian_at,
    load_model,
    new_mlp,
    save_model,
)
from .region import Region, box, from_vertices, load_region, sample_barycentric, simplex
from .train import AffineTarget, TrainConfig, Trainer, affine_target_penalty, train_loop
from .verify import Certificate, certify_affine, certify_fold_equivalence, certify_sign_patterns

__version__ = "0.1.0"
