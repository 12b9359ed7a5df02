"""UWB-assisted valet parking stack: localization, planning, tracking,
vehicle-server coordination, and a reproducible benchmark harness.

Deterministic by construction: every stochastic component draws from an
explicit seeded generator, so identical inputs give bitwise-identical runs.
"""

__version__ = "0.1.0"
