"""Taxi origin-destination flow forecasting toolkit.

Clusters trips into travel flows in 4D origin-destination space, compresses
the per-flow demand series with beta-divergence NMF, and forecasts the next
time window with a stacked recurrent network. Ships calendar / VAR / KNN /
MLP reference predictors, a synthetic city generator, and a stage-cached
CLI pipeline.
"""

__version__ = "0.1.0"

from odflow.geo import haversine_m
from odflow.kmeans import KMeansResult, kmeans
from odflow.nmf import NmfModel, beta_divergence, nmf_fit, nmf_inverse, nmf_transform

__all__ = [
    "haversine_m",
    "kmeans",
    "KMeansResult",
    "beta_divergence",
    "nmf_fit",
    "nmf_transform",
    "nmf_inverse",
    "NmfModel",
]
