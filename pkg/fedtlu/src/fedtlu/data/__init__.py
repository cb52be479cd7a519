"""Data pipeline: corpus, partitioning and batching."""
