"""ghoststat file formats: PGM images, GIPS pattern stacks, run directories and reports."""
