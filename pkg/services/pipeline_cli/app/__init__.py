"""Pipeline CLI application modules."""
