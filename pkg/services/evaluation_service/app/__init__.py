"""Evaluation service application modules."""
