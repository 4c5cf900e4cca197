"""Patch-wise binary hashing for scene change detection.

Images are sliced into a fixed grid of patches; each patch is projected to
an l-bit code by a small trainable head, and the patch codes are combined
into one global code by cascaded XOR (absolute difference on relaxed codes
during training). Change detection, localization, retrieval and long-term
storage all operate on the packed codes in Hamming space.
"""

from .errors import (
    BadMagicError,
    ConflictError,
    DimensionError,
    FormatError,
    HashSCDError,
    InvalidInputError,
    NotFoundError,
    TruncatedError,
    VersionError,
)
from .hash_space import (
    BitCode,
    binarize,
    binary_aggregate,
    bulk_hamming,
    hamming,
    normalized_hamming,
    phi,
    soft_aggregate,
    to_symmetric,
)
from .features import (
    DESCRIPTOR_DIM,
    compute_feature_map,
    describe_patch,
    extract_patch_grid,
    load_feature_map,
    load_image,
    save_feature_map,
    save_image,
)
from .model import (
    ImageHashes,
    ModelParams,
    SoftImageHashes,
    forward_image,
    forward_patch,
    hash_image,
    init_params,
    load_params,
    save_params,
)
from .training import (
    AdamState,
    AugmentationConfig,
    ContrastiveBatch,
    TrainConfig,
    adam_step,
    augment,
    build_batch,
    contrastive_loss,
    grad_total_loss,
    loss_and_grad,
    total_loss,
    train,
)
from .store import HashRecord, Store, create_store, open_store
from .retrieval import RankedList, average_precision, mean_average_precision, rank
from .change import (
    detect_global,
    f1,
    iou,
    localize,
    threshold_heatmap,
    upsample,
)
from .synth import (
    ChangeRect,
    SynthChangeSpec,
    SynthClusterSpec,
    gen_clusters,
    gen_pair,
)

__version__ = "0.1.0"
