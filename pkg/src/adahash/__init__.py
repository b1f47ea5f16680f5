"""Domain-adaptive hashing: common-space encoding, adversarial alignment,
pseudo-labeling, and Hamming-space retrieval."""

__version__ = "0.1.0"
