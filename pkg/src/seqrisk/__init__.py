"""seqrisk: longitudinal clinical-risk prediction on synthetic cohorts."""

__version__ = "0.1.0"
