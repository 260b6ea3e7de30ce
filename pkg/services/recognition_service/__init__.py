"""LLM-based activity recognition: prompts, gateway, log parsing, grammar validation."""
