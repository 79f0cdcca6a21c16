"""Transformer-dependent bridge scripts for the issue-classification pipeline.

These tools communicate with the main package exclusively through its file
formats: tokenized-docs JSONL in, sentence-vector JSONL and per-fold
prediction JSONL out.
"""

__version__ = "0.1.0"
