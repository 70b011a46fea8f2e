import itertools

import numpy as np


def brute_force_kmeans_cost(points: np.ndarray, k: int) -> float:
    """Global optimum of the K-means objective by exhaustive assignment."""
    best = np.inf
    for labels in itertools.product(range(k), repeat=len(points)):
        labels = np.array(labels)
        cost = 0.0
        for c in range(k):
            members = points[labels == c]
            if len(members):
                cost += float(((members - members.mean(axis=0)) ** 2).sum())
        best = min(best, cost)
    return best
