"""Endotracheal-suctioning activity recognition and feedback services."""
