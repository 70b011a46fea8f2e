"""Great-circle geometry helpers shared by the clustering code."""

from __future__ import annotations

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

# Length of one degree of latitude on the spherical model, in meters.
METERS_PER_DEG_LAT = EARTH_RADIUS_M * np.pi / 180.0


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters between WGS84 points.

    Accepts scalars or broadcastable numpy arrays of decimal degrees and
    returns float (or array) meters. Symmetric and non-negative.
    """
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=np.float64))
                              for v in (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    # clip guards rounding for near-antipodal inputs
    c = 2.0 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    d = EARTH_RADIUS_M * c
    return float(d) if np.ndim(d) == 0 else d


def max_pairwise_haversine_m(lats: np.ndarray, lons: np.ndarray) -> float:
    """Exact maximum pairwise great-circle distance within a point set.

    O(n^2) in memory-chunked passes; callers are expected to pre-reduce
    large sets (e.g. to convex-hull candidates) before calling.
    """
    n = len(lats)
    if n < 2:
        return 0.0
    lats = np.asarray(lats, dtype=np.float64)
    lons = np.asarray(lons, dtype=np.float64)
    best = 0.0
    # row-chunked upper triangle keeps peak memory at O(chunk * n)
    chunk = max(1, int(4e6 // max(n, 1)))
    for start in range(0, n - 1, chunk):
        stop = min(start + chunk, n - 1)
        d = haversine_m(lats[start:stop, None], lons[start:stop, None],
                        lats[None, :], lons[None, :])
        # mask lower triangle incl. diagonal for this row block
        cols = np.arange(n)[None, :]
        rows = np.arange(start, stop)[:, None]
        d = np.where(cols > rows, d, 0.0)
        m = float(d.max()) if d.size else 0.0
        if m > best:
            best = m
    return best


def meters_to_deg_lat(meters: float) -> float:
    return meters / METERS_PER_DEG_LAT


def meters_to_deg_lon(meters: float, at_lat_deg: float) -> float:
    scale = METERS_PER_DEG_LAT * np.cos(np.radians(at_lat_deg))
    return meters / scale
