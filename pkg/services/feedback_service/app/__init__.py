"""Feedback service application modules."""
