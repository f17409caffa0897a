"""Fine-grained factual error detection for document-summary pairs.

Facts are semantic frames; summary facts attend over document facts to
classify the four error types and to surface the most relevant document
facts as evidence highlights.
"""

from .attention import (
    Highlight,
    HighlightResult,
    ImportanceScores,
    MultiHeadCrossAttention,
    attend,
    importance,
    top_k_highlights,
)
from .classifier import ClassifierHead, decide, fuse, predict
from .core import (
    ErrorType,
    FrameArgument,
    FrameSource,
    LabelVector,
    Origin,
    Sample,
    SemanticFrame,
    SystemCategory,
    map_raw_error_labels,
    read_samples,
    write_samples,
)
from .encoder import (
    AdapterBertEncoder,
    AttentivePooler,
    ToyTransformerEncoder,
    encode_sample,
    fuse_layers,
    pool_fact,
)
from .model import (
    Checkpoint,
    FactErrorModel,
    ModelConfig,
    PreparedSample,
    build_model,
    load_checkpoint,
    prepare_samples,
    save_checkpoint,
)
from .srl import (
    LexiconBackend,
    SpanAlignment,
    SubprocessBackend,
    align_frames,
    extract_frames,
    read_frame_sidecar,
    tokenize,
    write_frame_sidecar,
)
from .training import TrainConfig, compute_class_weights, train, weighted_bce

__version__ = "0.1.0"
