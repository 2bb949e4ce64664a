"""Numerical laboratory for Wasserstein contraction of SDEs with irregular drift.

The package builds the auxiliary concave function and the explicit contraction
certificate for a dissipativity profile, simulates the reflection-coupled pair
of an SDE, estimates Wasserstein distances between simulated laws, and probes
the Zvonkin-transform / Bismut-formula machinery used for singular drifts.
"""

__version__ = "0.1.0"
