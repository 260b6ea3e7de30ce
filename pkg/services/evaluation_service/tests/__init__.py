"""Tests for the evaluation service."""
