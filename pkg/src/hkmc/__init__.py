"""Monte Carlo machinery for heat-semigroup derivatives on model manifolds."""

__version__ = "0.1.0"
