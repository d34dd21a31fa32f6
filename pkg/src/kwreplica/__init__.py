"""Replica lattice spin models: Renyi c-functions via Jarzynski Monte Carlo and exact duality checks."""

import os

# TBB on this class of machines is too old for numba; avoid the warning and use the portable pool.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
