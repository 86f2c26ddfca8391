"""Zero-shot label ranking from classifier probabilities via convex combinations of label embeddings."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CandidateIndex,
    ConseVector,
    RankedPrediction,
    ScoreRecord,
    conse_embed,
    load_scores,
    rank_candidates,
    scale_scores,
    top_t,
)
from .embeddings import (  # noqa: E402
    EmbeddingTable,
    LabelCatalog,
    LabelEmbedding,
    Split,
    label_embedding,
    label_embeddings,
    load_catalog,
    load_embeddings,
)
from .evaluation import (  # noqa: E402
    Assets,
    CandidateMode,
    EvalConfig,
    EvalReport,
    evaluate_batch,
    flat_hit_at_k,
    hier_precision_at_k,
)
from .hierarchy import (  # noqa: E402
    LabelHierarchy,
    hop_candidate_set,
    hop_distance,
    load_hierarchy,
    relevance_set,
)
