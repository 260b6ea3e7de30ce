"""Tests for the recognition service."""
