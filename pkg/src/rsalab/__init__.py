"""Random sequential adsorption laboratory.

Exact infinite-volume packing on finite windows via lazily generated Poisson
input and backward causal cones, plus correlation estimators and harnesses for
Gaussian limit and boundary-scaling experiments.
"""

__version__ = "0.1.0"
