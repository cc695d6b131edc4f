"""Core configuration and error modules."""
