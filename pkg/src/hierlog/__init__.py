"""Hierarchical one-class log anomaly detection.

Flat log sequences are lifted into a three-level topic hierarchy
(entity -> action -> status), recursively decomposed into per-level
sub-sequences, and checked against per-parent knowledge bases with
optional LLM-backed reasoning for unseen patterns.
"""

__version__ = "0.1.0"
