"""Relation-seeded VQA dataset generation, benchmark curation, and evaluation."""

__version__ = "0.1.0"
