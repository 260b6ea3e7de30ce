"""Recognition service application modules."""
