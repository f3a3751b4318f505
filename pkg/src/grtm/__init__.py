"""Discriminative relational topic models."""
