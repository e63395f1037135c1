"""Desk-scale lab for LLM-guided hierarchical RAN control of IAB power allocation."""

__version__ = "0.1.0"
