"""Explainable student feedback: keypoint features, isolation forest, Shapley attribution."""
