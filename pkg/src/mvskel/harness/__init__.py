"""Synthetic ground-truth scenes and the end-to-end pipeline driver."""
