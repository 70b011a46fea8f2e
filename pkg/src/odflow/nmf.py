"""Beta-divergence NMF via multiplicative updates.

Factorizes a non-negative (T, N) count matrix V into coefficients C (T, M)
and a basis B (M, N), V ~ CB, by alternating the heuristic multiplicative
update rules. beta selects the scalar cost: 2 = Euclidean, 1 = KL,
0 = Itakura-Saito.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from odflow import io

EPS = 1e-12

# TM + MN <= COMPRESSION_RATIO * TN counts as a genuine reduction
COMPRESSION_RATIO = 0.25


def beta_divergence(x, y, beta: float):
    """Elementwise beta-divergence d_beta(x | y).

    x may be zero for beta > 0 (0*log 0 reads as 0 in the KL case); for
    beta <= 0 a zero x is undefined and raises. y must be positive.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("beta divergence requires y > 0")
    if np.any(x < 0):
        raise ValueError("beta divergence requires x >= 0")
    # the general formula degenerates numerically as beta approaches its
    # removable singularities; snap to the limit branches there
    if abs(beta) < 1e-12:
        beta = 0.0
    elif abs(beta - 1.0) < 1e-12:
        beta = 1.0
    if beta <= 0 and np.any(x == 0):
        raise ValueError(f"beta divergence undefined for x = 0 at beta = {beta}")
    if beta == 1:
        xs = np.where(x > 0, x, 1.0)  # placeholder; the x=0 term is exactly y
        d = np.where(x > 0, x * np.log(xs / y) - x + y, y)
    elif beta == 0:
        ratio = x / y
        d = ratio - np.log(ratio) - 1.0
    else:
        d = (x ** beta + (beta - 1.0) * y ** beta
             - beta * x * y ** (beta - 1.0)) / (beta * (beta - 1.0))
        # x == y sits at the exact minimum; cancellation noise blows up when
        # divided by beta*(beta-1), so pin those entries to the true zero
        d = np.where(x == y, 0.0, d)
    if d.ndim == 0:
        return float(d)
    return d


def beta_divergence_total(v: np.ndarray, v_hat: np.ndarray, beta: float) -> float:
    """Matrix cost D(V | V_hat): elementwise divergences summed."""
    d = beta_divergence(v, v_hat, beta)
    return float(np.sum(d))


@dataclass
class NmfModel:
    basis: np.ndarray           # (M, N)
    coefficients: np.ndarray    # (T, M)
    beta: float
    n_components: int
    iterations_run: int
    divergence_trace: list[float] = field(default_factory=list)
    seed: int = 0
    compression_ok: bool = False
    monotone: bool = True


def _init_factors(shape_c, shape_b, target_mean: float,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    # strictly positive start keeps multiplicative updates from freezing zeros
    c = rng.uniform(0.01, 1.01, size=shape_c)
    b = rng.uniform(0.01, 1.01, size=shape_b)
    current = float((c @ b).mean())
    if target_mean > 0 and current > 0:
        s = np.sqrt(target_mean / current)
        c *= s
        b *= s
    return c, b


def _update_b(v, c, b, beta):
    cb = np.maximum(c @ b, EPS)
    numer = c.T @ (cb ** (beta - 2.0) * v)
    denom = np.maximum(c.T @ cb ** (beta - 1.0), EPS)
    return b * (numer / denom)


def _update_c(v, c, b, beta):
    cb = np.maximum(c @ b, EPS)
    numer = (cb ** (beta - 2.0) * v) @ b.T
    denom = np.maximum(cb ** (beta - 1.0) @ b.T, EPS)
    return c * (numer / denom)


def _trace_divergence(v, c, b, beta) -> float:
    return beta_divergence_total(v, np.maximum(c @ b, EPS), beta)


def nmf_fit(v: np.ndarray, n_components: int, beta: float = 1.0,
            max_iters: int = 500, tol: float = 1e-5, seed: int = 0) -> NmfModel:
    """Fit V ~ CB by alternating multiplicative updates.

    Stops when the relative divergence improvement over the last 10
    iterations falls below `tol`, or at `max_iters`. The divergence trace is
    asserted non-increasing for beta in [1, 2] (where the updates carry a
    descent guarantee) and merely recorded otherwise.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("V must be 2-D")
    if np.any(v < 0):
        raise ValueError("V must be non-negative")
    if not np.any(v > 0):
        raise ValueError("V is all zero; nothing to factorize")
    t_len, n_len = v.shape
    if not 1 <= n_components <= min(t_len, n_len):
        raise ValueError(
            f"n_components={n_components} outside [1, {min(t_len, n_len)}]")
    if beta <= 0 and np.any(v == 0):
        raise ValueError(
            f"beta={beta} divergence is undefined on zero entries; "
            "this V contains zeros")

    rng = np.random.default_rng(seed)
    c, b = _init_factors((t_len, n_components), (n_components, n_len),
                         float(v.mean()), rng)

    guaranteed = 1.0 <= beta <= 2.0
    trace = [_trace_divergence(v, c, b, beta)]
    monotone = True
    iterations = 0
    for i in range(max_iters):
        b = _update_b(v, c, b, beta)
        c = _update_c(v, c, b, beta)
        d = _trace_divergence(v, c, b, beta)
        if d > trace[-1] * (1.0 + 1e-9) + 1e-12:
            monotone = False
            if guaranteed:
                raise AssertionError(
                    f"divergence increased at iteration {i} for beta={beta}: "
                    f"{trace[-1]} -> {d}")
        trace.append(d)
        iterations = i + 1
        if i >= 10:
            past = trace[-11]
            if past <= 0 or (past - d) / past < tol:
                break

    ratio = (t_len * n_components + n_components * n_len) / (t_len * n_len)
    return NmfModel(
        basis=b, coefficients=c, beta=beta, n_components=n_components,
        iterations_run=iterations, divergence_trace=trace, seed=seed,
        compression_ok=bool(ratio <= COMPRESSION_RATIO), monotone=monotone,
    )


def nmf_transform(model: NmfModel, v_new: np.ndarray, max_iters: int = 500,
                  tol: float = 1e-5, seed: int = 0) -> np.ndarray:
    """Coefficient rows for new windows with the basis frozen."""
    v_new = np.asarray(v_new, dtype=np.float64)
    if v_new.ndim == 1:
        v_new = v_new[None, :]
    if v_new.shape[1] != model.basis.shape[1]:
        raise ValueError(
            f"V has {v_new.shape[1]} columns, basis expects {model.basis.shape[1]}")
    if np.any(v_new < 0):
        raise ValueError("V must be non-negative")

    rng = np.random.default_rng(seed)
    b = model.basis
    c = rng.uniform(0.01, 1.01, size=(v_new.shape[0], model.n_components))
    mean_v = float(v_new.mean())
    mean_cb = float((c @ b).mean())
    if mean_v > 0 and mean_cb > 0:
        c *= mean_v / mean_cb

    beta = model.beta
    # zero entries make the divergence itself undefined for beta <= 0, so
    # fall back to a coefficient-change stopping rule there
    track_divergence = beta > 0
    trace = [_trace_divergence(v_new, c, b, beta)] if track_divergence else []
    for i in range(max_iters):
        c_prev = c
        c = _update_c(v_new, c, b, beta)
        if track_divergence:
            d = _trace_divergence(v_new, c, b, beta)
            trace.append(d)
            if i >= 10:
                past = trace[-11]
                if past <= 0 or (past - d) / past < tol:
                    break
        else:
            delta = float(np.max(np.abs(c - c_prev)))
            if delta < tol * (float(np.max(np.abs(c))) + EPS):
                break
    return c


def nmf_inverse(model: NmfModel, coefficients: np.ndarray) -> np.ndarray:
    """Reconstruct count rows as C_rows @ B."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    single = coefficients.ndim == 1
    if single:
        coefficients = coefficients[None, :]
    if coefficients.shape[1] != model.n_components:
        raise ValueError(
            f"coefficients have width {coefficients.shape[1]}, "
            f"model has {model.n_components} components")
    out = coefficients @ model.basis
    return out[0] if single else out


def save_model(model: NmfModel, base_path: str | Path) -> None:
    base = Path(base_path)
    blob = base.with_suffix(".f64")
    manifest = io.write_f64_arrays(blob, {"basis": model.basis,
                                          "coefficients": model.coefficients})
    io.write_json(base.with_suffix(".json"), {
        "n_components": model.n_components,
        "beta": model.beta,
        "t_len": model.coefficients.shape[0],
        "n_len": model.basis.shape[1],
        "seed": model.seed,
        "iterations_run": model.iterations_run,
        "divergence_trace": model.divergence_trace,
        "compression_ok": model.compression_ok,
        "monotone": model.monotone,
        "arrays_file": blob.name,
        "arrays": manifest,
    })


def load_model(base_path: str | Path) -> NmfModel:
    base = Path(base_path)
    header = io.read_json(base.with_suffix(".json"))
    arrays = io.read_f64_arrays(base.parent / header["arrays_file"], header["arrays"])
    return NmfModel(
        basis=arrays["basis"], coefficients=arrays["coefficients"],
        beta=header["beta"], n_components=header["n_components"],
        iterations_run=header["iterations_run"],
        divergence_trace=header["divergence_trace"], seed=header["seed"],
        compression_ok=header["compression_ok"], monotone=header["monotone"],
    )
