"""Checkpoint-backed inference service for the damagescan /v1 protocol."""

__version__ = "0.1.0"
