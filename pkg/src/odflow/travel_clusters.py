"""Travel-flow extraction: grid cells, paired 2D K-means, and 4D K-means.

A "flow" groups trips whose origins and destinations fall together. The 4D
method clusters points (origin_lat, dest_lat, origin_lon, dest_lon) so one
cluster is one whole flow; the grid and paired-2D methods build flows as
(origin zone, destination zone) pairs and are kept for comparison.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from odflow import io
from odflow.geo import (haversine_m, max_pairwise_haversine_m,
                        meters_to_deg_lat, meters_to_deg_lon)
from odflow.kmeans import ScatterReport, kmeans, scatter_report

INSIGNIFICANT_ID = -1

# above this member count the exact pairwise zone diameter is computed on
# convex-hull candidates only
HULL_THRESHOLD = 2000

GRID = "grid"
PAIRED2D = "paired2d"
FOURD = "fourd"


@dataclass
class TripTable:
    """Column-oriented ride records (timestamps are UTC epoch seconds)."""

    timestamps: np.ndarray
    origin_lat: np.ndarray
    origin_lon: np.ndarray
    dest_lat: np.ndarray
    dest_lon: np.ndarray
    pair_ids: np.ndarray | None = None  # generator bookkeeping, not persisted

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        for name in ("origin_lat", "origin_lon", "dest_lat", "dest_lon"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        for lat in (self.origin_lat, self.dest_lat):
            if lat.size and (lat.min() < -90.0 or lat.max() > 90.0):
                raise ValueError("latitude outside [-90, 90]")
        for lon in (self.origin_lon, self.dest_lon):
            if lon.size and (lon.min() < -180.0 or lon.max() > 180.0):
                raise ValueError("longitude outside [-180, 180]")

    def __len__(self) -> int:
        return len(self.timestamps)

    def od_points(self) -> np.ndarray:
        """Trips as 4D points (origin_lat, dest_lat, origin_lon, dest_lon)."""
        return np.column_stack(
            [self.origin_lat, self.dest_lat, self.origin_lon, self.dest_lon])

    def select(self, mask: np.ndarray) -> "TripTable":
        return TripTable(
            self.timestamps[mask], self.origin_lat[mask], self.origin_lon[mask],
            self.dest_lat[mask], self.dest_lon[mask],
            None if self.pair_ids is None else self.pair_ids[mask])


def save_trips_csv(trips: TripTable, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "origin_lat", "origin_lon", "dest_lat", "dest_lon"])
        for i in range(len(trips)):
            ts = datetime.fromtimestamp(int(trips.timestamps[i]), tz=timezone.utc)
            writer.writerow([
                ts.isoformat(),
                repr(float(trips.origin_lat[i])), repr(float(trips.origin_lon[i])),
                repr(float(trips.dest_lat[i])), repr(float(trips.dest_lon[i])),
            ])


def parse_utc_timestamp(text: str) -> int:
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def load_trips_csv(path: str | Path) -> TripTable:
    ts, olat, olon, dlat, dlon = [], [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            ts.append(parse_utc_timestamp(row["timestamp"]))
            olat.append(float(row["origin_lat"]))
            olon.append(float(row["origin_lon"]))
            dlat.append(float(row["dest_lat"]))
            dlon.append(float(row["dest_lon"]))
    return TripTable(np.array(ts), np.array(olat), np.array(olon),
                     np.array(dlat), np.array(dlon))


@dataclass
class ZoneStats:
    cluster_id: int
    origin_max_intra_m: float
    dest_max_intra_m: float
    travel_count: int


@dataclass
class TravelClusterModel:
    """Fitted flow clustering plus everything needed to assign new trips.

    `assignments` maps each training trip to a dense flow id, with
    INSIGNIFICANT_ID for trips whose flow was filtered out. For the 4D and
    paired-2D methods, centers live in the z-scored fitting space and the
    standardization statistics are stored for reuse at assignment time.
    """

    method: str
    n_clusters: int
    seed: int
    assignments: np.ndarray
    travel_counts: np.ndarray                      # per dense flow id
    # fourd
    centers: np.ndarray | None = None              # (K_orig, 4) standardized
    standardize_mean: np.ndarray | None = None
    standardize_std: np.ndarray | None = None
    # paired2d
    origin_centers: np.ndarray | None = None       # (K_o, 2) standardized
    dest_centers: np.ndarray | None = None         # (K_d, 2) standardized
    origin_standardize: tuple | None = None        # (mean(2,), std(2,))
    dest_standardize: tuple | None = None
    pair_flows: np.ndarray | None = None           # (n_flows, 2) original (o, d) ids
    # grid
    grid_anchor: tuple | None = None               # (lat_min, lon_min)
    grid_step_deg: tuple | None = None             # (dlat, dlon)
    grid_shape: tuple | None = None                # (n_rows, n_cols)
    grid_flows: np.ndarray | None = None           # (n_flows, 2) flattened cells
    od_size_occupied: int | None = None
    od_size_cartesian: int | None = None
    # filtering
    dropped_ids: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    id_map: np.ndarray | None = None               # original id -> dense id or -1
    fit_cost: float = 0.0

    def original_cluster_count(self) -> int:
        if self.id_map is not None:
            return len(self.id_map)
        return self.n_clusters


def _standardize(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = points.mean(axis=0)
    std = points.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (points - mean) / std, mean, std


def _apply_standardize(points: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (points - mean) / std


def _dense_flows(raw_keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map raw per-trip flow keys to dense ids; returns (flows, dense_ids)."""
    flows, dense = np.unique(raw_keys, axis=0, return_inverse=True)
    return flows, dense.astype(np.int64)


def kmeans_4d(trips: TripTable, k: int, seed: int = 0, max_iters: int = 300,
              tol: float = 1e-4, n_init: int = 1) -> TravelClusterModel:
    """One cluster = one travel flow, fit in z-scored 4D OD space."""
    if len(trips) == 0:
        raise ValueError("no trips to cluster")
    points, mean, std = _standardize(trips.od_points())
    result = kmeans(points, k, seed=seed, max_iters=max_iters, tol=tol,
                    n_init=n_init)
    counts = np.bincount(result.assignments, minlength=k).astype(np.int64)
    return TravelClusterModel(
        method=FOURD, n_clusters=k, seed=seed,
        assignments=result.assignments.astype(np.int64),
        travel_counts=counts,
        centers=result.centers, standardize_mean=mean, standardize_std=std,
        id_map=np.arange(k, dtype=np.int64),
        fit_cost=result.cost,
    )


def pair_2d(trips: TripTable, k_origin: int, k_dest: int, seed: int = 0,
            max_iters: int = 300, tol: float = 1e-4, n_init: int = 1) -> TravelClusterModel:
    """Cluster origins and destinations separately, then pair the zone ids.

    Only (origin zone, destination zone) pairs that actually occur become
    flows; the flow id is the dense index of the pair.
    """
    if len(trips) == 0:
        raise ValueError("no trips to cluster")
    o_seed, d_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(2))
    origins, o_mean, o_std = _standardize(
        np.column_stack([trips.origin_lat, trips.origin_lon]))
    dests, d_mean, d_std = _standardize(
        np.column_stack([trips.dest_lat, trips.dest_lon]))
    o_fit = kmeans(origins, k_origin, seed=o_seed, max_iters=max_iters, tol=tol,
                   n_init=n_init)
    d_fit = kmeans(dests, k_dest, seed=d_seed, max_iters=max_iters, tol=tol,
                   n_init=n_init)

    raw = np.column_stack([o_fit.assignments, d_fit.assignments])
    flows, dense = _dense_flows(raw)
    counts = np.bincount(dense, minlength=len(flows)).astype(np.int64)
    return TravelClusterModel(
        method=PAIRED2D, n_clusters=len(flows), seed=seed,
        assignments=dense, travel_counts=counts,
        origin_centers=o_fit.centers, dest_centers=d_fit.centers,
        origin_standardize=(o_mean, o_std), dest_standardize=(d_mean, d_std),
        pair_flows=flows.astype(np.int64),
        od_size_occupied=k_origin * k_dest,
        od_size_cartesian=k_origin * k_dest,
        id_map=np.arange(len(flows), dtype=np.int64),
        fit_cost=o_fit.cost + d_fit.cost,
    )


def grid_partition(trips: TripTable, cell_size_m: float) -> TravelClusterModel:
    """Assign each trip to its (origin cell, destination cell) square pair.

    Cells are anchored at the bounding-box minimum corner, closed on the low
    edge; the metric cell size is converted to degree steps at the box's
    mid-latitude.
    """
    if len(trips) == 0:
        raise ValueError("no trips to cluster")
    if cell_size_m <= 0:
        raise ValueError("cell_size_m must be positive")
    all_lat = np.concatenate([trips.origin_lat, trips.dest_lat])
    all_lon = np.concatenate([trips.origin_lon, trips.dest_lon])
    lat_min, lat_max = float(all_lat.min()), float(all_lat.max())
    lon_min, lon_max = float(all_lon.min()), float(all_lon.max())
    mid_lat = 0.5 * (lat_min + lat_max)
    dlat = meters_to_deg_lat(cell_size_m)
    dlon = meters_to_deg_lon(cell_size_m, mid_lat)

    n_rows = int(np.floor((lat_max - lat_min) / dlat)) + 1
    n_cols = int(np.floor((lon_max - lon_min) / dlon)) + 1

    def cell_of(lat, lon):
        r = np.floor((lat - lat_min) / dlat).astype(np.int64)
        c = np.floor((lon - lon_min) / dlon).astype(np.int64)
        return r * n_cols + c

    o_cell = cell_of(trips.origin_lat, trips.origin_lon)
    d_cell = cell_of(trips.dest_lat, trips.dest_lon)
    raw = np.column_stack([o_cell, d_cell])
    flows, dense = _dense_flows(raw)
    counts = np.bincount(dense, minlength=len(flows)).astype(np.int64)

    n_occ_o = len(np.unique(o_cell))
    n_occ_d = len(np.unique(d_cell))
    total_cells = n_rows * n_cols
    return TravelClusterModel(
        method=GRID, n_clusters=len(flows), seed=0,
        assignments=dense, travel_counts=counts,
        grid_anchor=(lat_min, lon_min), grid_step_deg=(dlat, dlon),
        grid_shape=(n_rows, n_cols), grid_flows=flows.astype(np.int64),
        od_size_occupied=n_occ_o * n_occ_d,
        od_size_cartesian=total_cells * total_cells,
        id_map=np.arange(len(flows), dtype=np.int64),
    )


def _diameter_m(lats: np.ndarray, lons: np.ndarray) -> float:
    if len(lats) < 2:
        return 0.0
    if len(lats) > HULL_THRESHOLD:
        pts = np.column_stack([lats, lons])
        try:
            hull = ConvexHull(pts)
            idx = hull.vertices
            return max_pairwise_haversine_m(lats[idx], lons[idx])
        except QhullError:
            pass  # degenerate geometry: fall through to exhaustive
    return max_pairwise_haversine_m(lats, lons)


def zone_stats(model: TravelClusterModel, trips: TripTable) -> list[ZoneStats]:
    """Per-flow origin/destination zone diameters and member counts."""
    stats = []
    assignments = model.assignments
    if len(assignments) != len(trips):
        raise ValueError("assignments do not match the trip table")
    order = np.argsort(assignments, kind="stable")
    sorted_ids = assignments[order]
    boundaries = np.searchsorted(sorted_ids, np.arange(model.n_clusters + 1))
    for cid in range(model.n_clusters):
        members = order[boundaries[cid]:boundaries[cid + 1]]
        stats.append(ZoneStats(
            cluster_id=cid,
            origin_max_intra_m=_diameter_m(trips.origin_lat[members],
                                           trips.origin_lon[members]),
            dest_max_intra_m=_diameter_m(trips.dest_lat[members],
                                         trips.dest_lon[members]),
            travel_count=int(len(members)),
        ))
    return stats


def filter_insignificant(model: TravelClusterModel, trips: TripTable | None = None,
                         min_travels: int = 10) -> tuple[TravelClusterModel, np.ndarray]:
    """Drop flows with fewer than `min_travels` trips and re-index densely.

    Returns the filtered model and the ORIGINAL ids of dropped flows. The
    original geometry (centers / pairs / cells) is retained so new trips can
    still be routed to a dropped flow and reported as insignificant.
    """
    counts = model.travel_counts
    keep = counts >= min_travels
    dropped_dense = np.flatnonzero(~keep)

    # dense ids of the current model map back to original ids via id_map
    current_map = model.id_map if model.id_map is not None else np.arange(len(counts))
    original_of_dense = np.flatnonzero(current_map >= 0)[np.argsort(current_map[current_map >= 0])]

    new_dense = np.full(len(counts), INSIGNIFICANT_ID, dtype=np.int64)
    new_dense[keep] = np.arange(int(keep.sum()))

    new_id_map = np.full(model.original_cluster_count(), INSIGNIFICANT_ID, dtype=np.int64)
    for dense_id, orig_id in enumerate(original_of_dense):
        new_id_map[orig_id] = new_dense[dense_id]

    assignments = model.assignments.copy()
    live = assignments >= 0
    assignments[live] = new_dense[assignments[live]]

    dropped_original = original_of_dense[dropped_dense]
    all_dropped = np.union1d(model.dropped_ids, dropped_original).astype(np.int64)

    filtered = TravelClusterModel(
        method=model.method, n_clusters=int(keep.sum()), seed=model.seed,
        assignments=assignments, travel_counts=counts[keep],
        centers=model.centers, standardize_mean=model.standardize_mean,
        standardize_std=model.standardize_std,
        origin_centers=model.origin_centers, dest_centers=model.dest_centers,
        origin_standardize=model.origin_standardize, dest_standardize=model.dest_standardize,
        pair_flows=model.pair_flows,
        grid_anchor=model.grid_anchor, grid_step_deg=model.grid_step_deg,
        grid_shape=model.grid_shape, grid_flows=model.grid_flows,
        od_size_occupied=model.od_size_occupied, od_size_cartesian=model.od_size_cartesian,
        dropped_ids=all_dropped, id_map=new_id_map, fit_cost=model.fit_cost,
    )
    return filtered, dropped_original


def assign_trips(model: TravelClusterModel, trips: TripTable) -> np.ndarray:
    """Route new trips to dense flow ids (INSIGNIFICANT_ID when filtered out).

    4D models use nearest-center assignment in the stored standardized space
    with ties to the lowest index; pair/grid models map through their zone
    geometry and return INSIGNIFICANT_ID for pairs never materialized.
    """
    if len(trips) == 0:
        return np.array([], dtype=np.int64)
    if model.method == FOURD:
        points = _apply_standardize(trips.od_points(), model.standardize_mean,
                                    model.standardize_std)
        d = (points * points).sum(axis=1)[:, None] - 2.0 * points @ model.centers.T
        d += (model.centers * model.centers).sum(axis=1)[None, :]
        original = np.argmin(d, axis=1)
        return model.id_map[original]
    if model.method == PAIRED2D:
        o_mean, o_std = model.origin_standardize
        d_mean, d_std = model.dest_standardize
        origins = _apply_standardize(
            np.column_stack([trips.origin_lat, trips.origin_lon]), o_mean, o_std)
        dests = _apply_standardize(
            np.column_stack([trips.dest_lat, trips.dest_lon]), d_mean, d_std)
        o_ids = np.argmin(((origins[:, None, :] - model.origin_centers[None]) ** 2).sum(-1), axis=1)
        d_ids = np.argmin(((dests[:, None, :] - model.dest_centers[None]) ** 2).sum(-1), axis=1)
        return _lookup_pairs(model.pair_flows, model.id_map,
                             np.column_stack([o_ids, d_ids]))
    if model.method == GRID:
        lat_min, lon_min = model.grid_anchor
        dlat, dlon = model.grid_step_deg
        n_cols = model.grid_shape[1]
        o_cell = (np.floor((trips.origin_lat - lat_min) / dlat).astype(np.int64) * n_cols
                  + np.floor((trips.origin_lon - lon_min) / dlon).astype(np.int64))
        d_cell = (np.floor((trips.dest_lat - lat_min) / dlat).astype(np.int64) * n_cols
                  + np.floor((trips.dest_lon - lon_min) / dlon).astype(np.int64))
        return _lookup_pairs(model.grid_flows, model.id_map,
                             np.column_stack([o_cell, d_cell]))
    raise ValueError(f"unknown clustering method {model.method!r}")


def _lookup_pairs(flows: np.ndarray, id_map: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Map (zone, zone) query pairs to dense flow ids via the fitted pairs."""
    table = {(int(a), int(b)): id_map[i] for i, (a, b) in enumerate(flows)}
    return np.array([table.get((int(a), int(b)), INSIGNIFICANT_ID)
                     for a, b in queries], dtype=np.int64)


def model_scatter(model: TravelClusterModel, trips: TripTable) -> ScatterReport:
    """Scatter decomposition of the 4D fit over its own training trips."""
    if model.method != FOURD:
        raise ValueError("scatter decomposition is defined for the 4D fit")
    points = _apply_standardize(trips.od_points(), model.standardize_mean,
                                model.standardize_std)
    original = model.assignments
    if model.id_map is not None and len(model.dropped_ids):
        raise ValueError("scatter requires the unfiltered model")
    return scatter_report(points, model.centers, original)


@dataclass
class KSearchRow:
    k: int
    mean_zone_max_m: float
    n_significant: int


@dataclass
class KSearchReport:
    chosen_k: int
    rows: list[KSearchRow]
    target_satisfied: bool


def k_search(trips: TripTable, target_zone_max_m: float, candidate_ks: list[int],
             seed: int = 0, min_travels: int = 10) -> KSearchReport:
    """Sweep cluster counts; pick the smallest K whose zones are small enough.

    "Small enough" means the mean over flows of max(origin diameter,
    destination diameter) is at or below `target_zone_max_m`. When no
    candidate satisfies the target the largest K is returned with
    `target_satisfied=False`.
    """
    if not candidate_ks:
        raise ValueError("candidate_ks must be non-empty")
    if sorted(candidate_ks) != list(candidate_ks):
        raise ValueError("candidate_ks must be ascending")
    rows = []
    chosen = None
    for k in candidate_ks:
        model = kmeans_4d(trips, k, seed=seed)
        stats = zone_stats(model, trips)
        zone_max = np.array([max(s.origin_max_intra_m, s.dest_max_intra_m)
                             for s in stats])
        n_significant = int(sum(1 for s in stats if s.travel_count >= min_travels))
        mean_zone = float(zone_max.mean()) if len(zone_max) else 0.0
        rows.append(KSearchRow(k=k, mean_zone_max_m=mean_zone,
                               n_significant=n_significant))
        if chosen is None and mean_zone <= target_zone_max_m:
            chosen = k
    satisfied = chosen is not None
    if chosen is None:
        chosen = candidate_ks[-1]
    return KSearchReport(chosen_k=chosen, rows=rows, target_satisfied=satisfied)


def save_k_search_csv(report: KSearchReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["K", "mean_zone_max_m", "n_significant"])
        for row in report.rows:
            writer.writerow([row.k, repr(row.mean_zone_max_m), row.n_significant])


def save_model(model: TravelClusterModel, base_path: str | Path) -> None:
    """Persist as <base>.json header plus <base>.f64 center blob."""
    base = Path(base_path)
    arrays: dict[str, np.ndarray] = {}
    for name in ("centers", "standardize_mean", "standardize_std",
                 "origin_centers", "dest_centers"):
        value = getattr(model, name)
        if value is not None:
            arrays[name] = value
    if model.origin_standardize is not None:
        arrays["origin_standardize"] = np.vstack(model.origin_standardize)
        arrays["dest_standardize"] = np.vstack(model.dest_standardize)
    blob = base.with_suffix(".f64")
    manifest = io.write_f64_arrays(blob, arrays)
    header = {
        "method": model.method,
        "n_clusters": model.n_clusters,
        "seed": model.seed,
        "travel_counts": model.travel_counts.tolist(),
        "dropped_ids": model.dropped_ids.tolist(),
        "id_map": None if model.id_map is None else model.id_map.tolist(),
        "pair_flows": None if model.pair_flows is None else model.pair_flows.tolist(),
        "grid_anchor": model.grid_anchor,
        "grid_step_deg": model.grid_step_deg,
        "grid_shape": model.grid_shape,
        "grid_flows": None if model.grid_flows is None else model.grid_flows.tolist(),
        "od_size_occupied": model.od_size_occupied,
        "od_size_cartesian": model.od_size_cartesian,
        "fit_cost": model.fit_cost,
        "centers_file": blob.name,
        "arrays": manifest,
        "assignments": model.assignments.tolist(),
    }
    io.write_json(base.with_suffix(".json"), header)


def load_model(base_path: str | Path) -> TravelClusterModel:
    base = Path(base_path)
    header = io.read_json(base.with_suffix(".json"))
    arrays = io.read_f64_arrays(base.parent / header["centers_file"], header["arrays"])
    o_std = d_std = None
    if "origin_standardize" in arrays:
        o = arrays["origin_standardize"]
        d = arrays["dest_standardize"]
        o_std, d_std = (o[0], o[1]), (d[0], d[1])
    return TravelClusterModel(
        method=header["method"], n_clusters=header["n_clusters"], seed=header["seed"],
        assignments=np.array(header["assignments"], dtype=np.int64),
        travel_counts=np.array(header["travel_counts"], dtype=np.int64),
        centers=arrays.get("centers"),
        standardize_mean=arrays.get("standardize_mean"),
        standardize_std=arrays.get("standardize_std"),
        origin_centers=arrays.get("origin_centers"),
        dest_centers=arrays.get("dest_centers"),
        origin_standardize=o_std, dest_standardize=d_std,
        pair_flows=None if header["pair_flows"] is None else np.array(header["pair_flows"], dtype=np.int64),
        grid_anchor=None if header["grid_anchor"] is None else tuple(header["grid_anchor"]),
        grid_step_deg=None if header["grid_step_deg"] is None else tuple(header["grid_step_deg"]),
        grid_shape=None if header["grid_shape"] is None else tuple(header["grid_shape"]),
        grid_flows=None if header["grid_flows"] is None else np.array(header["grid_flows"], dtype=np.int64),
        od_size_occupied=header["od_size_occupied"],
        od_size_cartesian=header["od_size_cartesian"],
        dropped_ids=np.array(header["dropped_ids"], dtype=np.int64),
        id_map=None if header["id_map"] is None else np.array(header["id_map"], dtype=np.int64),
        fit_cost=header["fit_cost"],
    )
