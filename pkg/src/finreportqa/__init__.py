"""Numerical question answering over long financial reports.

Provides report parsing, per-report sparse/dense retrieval, a multi-round
agentic QA pipeline with baselines, the evaluation metrics, and the dataset
generation/filtering tooling, all behind one CLI (``finreportqa``).
"""

__version__ = "0.1.0"
