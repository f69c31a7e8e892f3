"""ghoststat core: imaging, sampling, forward model, estimators, theory and analysis."""
