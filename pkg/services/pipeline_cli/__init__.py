"""Command-line orchestration of the pipeline."""
