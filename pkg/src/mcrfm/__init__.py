"""Mixed-curvature flow-matching few-shot adapter over cached feature vectors.

The core pieces compose like any estimator stack:

    from mcrfm import MCRFMClassifier
    clf = MCRFMClassifier().fit(support_features, support_labels)
    predictions = clf.predict(query_features)

Lower-level entry points (episodic training with run reports, the FVEC1
feature-cache format, the synthetic hierarchy generator, and the ball /
product-manifold primitives) are exported below; the ``mcrfm`` CLI wires
them together for reproducible experiments.
"""

__version__ = "0.1.0"

from .config import SEED_PRESETS, TrainConfig, apply_variant
from .datahub import (
    Episode,
    FeatureCache,
    HierarchySpec,
    generate_hierarchy,
    load_episode,
    read_cache,
    sample_episode,
    save_episode,
    write_cache,
)
from .estimator import MCRFMClassifier
from .geometry import BallPoint, Curvature, PoincareBall, TangentVector
from .manifold import ProductState, ProductVelocity
from .trainer import diagnostics, infer, train_adapter, train_episode

__all__ = [
    "BallPoint",
    "Curvature",
    "Episode",
    "FeatureCache",
    "HierarchySpec",
    "MCRFMClassifier",
    "PoincareBall",
    "ProductState",
    "ProductVelocity",
    "SEED_PRESETS",
    "TangentVector",
    "TrainConfig",
    "apply_variant",
    "diagnostics",
    "generate_hierarchy",
    "infer",
    "load_episode",
    "read_cache",
    "sample_episode",
    "save_episode",
    "train_adapter",
    "train_episode",
    "write_cache",
    "__version__",
]
