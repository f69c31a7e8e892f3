"""ghoststat utilities."""
