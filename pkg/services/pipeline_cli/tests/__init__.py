"""Tests for the pipeline CLI."""
