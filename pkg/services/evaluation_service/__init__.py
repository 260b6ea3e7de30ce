"""Interval-based evaluation of activity logs."""
