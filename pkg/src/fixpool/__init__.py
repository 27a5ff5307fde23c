"""Meta-learning testbed for the episodic (ML) and fixed-support-pool (FIX-ML) objectives."""

__version__ = "0.1.0"
