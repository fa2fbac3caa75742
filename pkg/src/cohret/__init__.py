"""Coherence-aware dual-encoder text-to-image retrieval.

A dual encoder trained with a hard-negative triplet objective and an
auxiliary coherence-relation classifier, plus inference-time selective
similarity refinement, retrieval metrics, and a pairwise human-evaluation
protocol.
"""

from .corpus import (
    CITE_RELATIONS,
    CLUE_RELATIONS,
    Corpus,
    CorpusError,
    CorpusPair,
    RelationVocab,
    load_corpus,
    relation_positive_rates,
    save_corpus,
    split_corpus,
)
from .encoders import AttentionPool, EncoderParams, ImageEncoder, TextEncoder, masked_softmax
from .metrics import (
    RetrievalMetrics,
    average_precision,
    median_rank,
    per_relation_metrics,
    recall_at_k,
)
from .model import RetrievalModel, parse_mode
from .objectives import (
    CoherenceHead,
    LossConfig,
    cosine_similarity,
    mine_hard_negatives,
    relation_weights,
    total_loss,
    triplet_hinge,
    triplet_retrieval_loss,
    weighted_bce,
)
from .retrieval import (
    RankingResult,
    RefinementConfig,
    SimilarityMatrix,
    build_similarity_matrix,
    confidence_from_probs,
    confidence_scores,
    rank_images,
    refine_similarities,
    sample_retrieval_pool,
    selective_refine,
)
from .synthetic import SyntheticConfig, generate_synthetic_corpus
from .textproc import TokenSequence, Vocab, build_vocab, tokenize, tokenize_and_pad
from .trainer import (
    CheckpointSet,
    EvalReport,
    TrainConfig,
    TrainingDiverged,
    evaluate_repeated,
    load_checkpoint,
    save_checkpoint,
    sweep,
    train,
)
from .word2vec import EmbeddingTable, train_word_embeddings

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
