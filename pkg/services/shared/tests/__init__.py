"""Tests for shared domain types."""
