"""Toolkit for multilingual medical LLM data pipelines.

Covers corpus ingestion, dictionary-based domain filtering, benchmark
overlap screening, semantic-unit chunking, QA rewrite job management,
priority-sampled training schedules, checkpoint weight averaging,
logit-offset proxy decoding and a few-shot multiple-choice evaluation
harness. Everything is exercisable at desk scale; no model training
happens here.
"""

__version__ = "0.1.0"
