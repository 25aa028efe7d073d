"""Desk-scale lifecycle for multimodal product embeddings.

Pipeline stages: synthetic corpus generation, purchase-pair curation,
contrastive encoder training with enlarged negative pools, a versioned
two-tier embedding store, a behavior-sequence CTR head, and an evaluation
harness tying retrieval recall to downstream AUC.
"""

__version__ = "0.1.0"
