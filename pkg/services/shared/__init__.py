"""Domain types, errors, logging and metrics shared across services."""
