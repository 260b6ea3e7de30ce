"""Tests for the feedback service."""
