"""Evaluation-aligned surrogate training with soft-set confusion matrices."""
