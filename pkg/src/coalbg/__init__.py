"""Genealogy of a neutral sample linked to a locus under selection.

Modules
-------
core          parameters, scale conventions, grids, random streams, configs
wf_exact      exact Wright-Fisher chain and the identity recursion
moran         finite-N Moran chain: rates, stationary law, exact simulation
diffusion     frequency diffusion: scale/speed, boundaries, density, paths
coalescent_mc Monte Carlo engines and estimators
identity_ode  coupled backward equations: identities, CDFs, mean times
checks        cross-validation suites
cli           command-line runner
"""
from __future__ import annotations

from importlib import metadata

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .core import FrequencyGrid, ModelParams, SampleState, SelectionProfile, replicate_stream  # noqa: E402

__all__ = ["FrequencyGrid", "ModelParams", "SampleState", "SelectionProfile", "replicate_stream", "__version__"]
