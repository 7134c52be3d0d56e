"""Model augmented fine-tuning of black-box text embeddings.

A frozen embedding provider is concatenated with a small trainable hashed
linear encoder; the pair is trained with Plackett-Luce / InfoNCE ranking
losses and evaluated with Recall@K and NDCG@K.
"""

from mafin.core import EmbeddingVector, cosine, dot, l2_normalize

__version__ = "0.1.0"

__all__ = ["EmbeddingVector", "cosine", "dot", "l2_normalize", "__version__"]
