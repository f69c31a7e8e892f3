"""ghoststat acceptance suite."""
