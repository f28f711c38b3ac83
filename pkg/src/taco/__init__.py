"""Contrastive pre-training and textual-attribute recognition on synthetic text segments."""

__version__ = "0.1.0"
