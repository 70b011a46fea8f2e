"""Training loop for the forecasting networks: RMSProp, clipping, min-max
normalization, windowed dataset assembly, and next-window prediction."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from odflow import io
from odflow.network import MlpNetwork, StackedRecurrentNetwork, mse_loss, mse_loss_grad
from odflow.nmf import NmfModel, nmf_inverse


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.9
    epsilon: float = 1e-8
    epochs: int = 100
    batch_size: int = 32
    gradient_clip_norm: float | None = 5.0
    seed: int = 0
    val_fraction: float = 0.15
    early_stop_patience: int = 10

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise ValueError("rmsprop_decay must lie in (0, 1)")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


def clip_gradients(grads: dict[str, np.ndarray],
                   max_norm: float | None) -> dict[str, np.ndarray]:
    """Scale the whole gradient set so its global L2 norm is at most max_norm."""
    if max_norm is None:
        return grads
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        return {name: g * scale for name, g in grads.items()}
    return grads


def rmsprop_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 state: dict[str, np.ndarray], config: TrainConfig) -> None:
    """One in-place RMSProp step with optional global-norm clipping first.

    v <- rho v + (1 - rho) g^2;  w <- w - lr g / (sqrt(v) + eps).
    """
    grads = clip_gradients(grads, config.gradient_clip_norm)
    for name, g in grads.items():
        if name not in state:
            state[name] = np.zeros_like(g)
        v = state[name]
        v *= config.rmsprop_decay
        v += (1.0 - config.rmsprop_decay) * g * g
        params[name] -= config.learning_rate * g / (np.sqrt(v) + config.epsilon)


@dataclass
class MinMaxNormalizer:
    """Per-channel min-max scaling to [0, 1], fit on the training split only."""

    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def fit(cls, matrix: np.ndarray) -> "MinMaxNormalizer":
        return cls(mins=matrix.min(axis=0).astype(np.float64),
                   maxs=matrix.max(axis=0).astype(np.float64))

    def _span(self) -> np.ndarray:
        span = self.maxs - self.mins
        return np.where(span > 0, span, 1.0)

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        return (matrix - self.mins) / self._span()

    def inverse_transform(self, matrix: np.ndarray) -> np.ndarray:
        return matrix * self._span() + self.mins

    def slice(self, columns: slice) -> "MinMaxNormalizer":
        return MinMaxNormalizer(self.mins[columns], self.maxs[columns])


def build_windows(features: np.ndarray, targets: np.ndarray,
                  t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sliding windows: sample s packs rows [s, s+t) and predicts row s+t.

    Returns (X (S, t, D), Y (S, M), target_rows (S,)).
    """
    if t < 1:
        raise ValueError("window length t must be >= 1")
    n = len(features)
    if t >= n:
        raise ValueError(f"t={t} leaves no target rows in a series of length {n}")
    idx = np.arange(t, n)
    x = np.stack([features[i - t:i] for i in idx])
    y = targets[idx]
    return x, y, idx


@dataclass
class TrainHistory:
    epochs: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    stopped_early: bool = False
    best_epoch: int = -1


def train_network(net, x: np.ndarray, y: np.ndarray, config: TrainConfig,
                  x_extra: np.ndarray | None = None) -> TrainHistory:
    """Epoch-shuffled mini-batch RMSProp training on MSE.

    The chronological tail (`val_fraction`) is held out for the per-epoch
    validation score and early stopping; the best-validation weights are
    restored on exit. Deterministic for a fixed (config.seed, data).
    """
    n = len(x)
    if n == 0:
        raise ValueError("empty training set")
    n_val = int(round(n * config.val_fraction))
    n_train = n - n_val
    if n_train <= 0:
        raise ValueError("validation split leaves no training samples")
    rng = np.random.default_rng(config.seed)
    optimizer_state: dict[str, np.ndarray] = {}
    history = TrainHistory()
    best_val = np.inf
    best_params: dict[str, np.ndarray] | None = None
    stall = 0

    def _forward_eval(lo, hi):
        extra = None if x_extra is None else x_extra[lo:hi]
        pred, _ = net.forward(x[lo:hi], extra)
        return mse_loss(pred, y[lo:hi])

    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        train_sq_sum = 0.0
        for start in range(0, n_train, config.batch_size):
            batch = order[start:start + config.batch_size]
            extra = None if x_extra is None else x_extra[batch]
            pred, cache = net.forward(x[batch], extra)
            loss = mse_loss(pred, y[batch])
            train_sq_sum += loss * len(batch)
            _, grads = net.backward(cache, mse_loss_grad(pred, y[batch]))
            rmsprop_step(net.params(), grads, optimizer_state, config)
        train_mse = train_sq_sum / n_train
        val_mse = _forward_eval(n_train, n) if n_val else float("nan")
        history.epochs.append(epoch)
        history.train_mse.append(train_mse)
        history.val_mse.append(val_mse)

        if n_val:
            if val_mse < best_val - 1e-12:
                best_val = val_mse
                best_params = {k: v.copy() for k, v in net.params().items()}
                history.best_epoch = epoch
                stall = 0
            else:
                stall += 1
                if stall >= config.early_stop_patience:
                    history.stopped_early = True
                    break

    if best_params is not None:
        net.set_params(best_params)
    return history


@dataclass
class ForecastModel:
    """A trained network plus everything needed to turn raw feature rows
    into denormalized next-window coefficient estimates."""

    network: StackedRecurrentNetwork | MlpNetwork
    t: int
    normalizer: MinMaxNormalizer        # over the full feature matrix columns
    coef_columns: slice                 # which feature columns are coefficients
    feature_names: list[str]
    history: TrainHistory
    config: TrainConfig
    window_len_s: int = 3600

    @property
    def cell_kind(self) -> str:
        return self.network.cell_kind

    def predict_coefficients(self, raw_windows: np.ndarray) -> np.ndarray:
        """Denormalized, non-negative coefficient estimates for raw windows."""
        raw_windows = np.asarray(raw_windows, dtype=np.float64)
        single = raw_windows.ndim == 2
        if single:
            raw_windows = raw_windows[None]
        if raw_windows.shape[1] != self.t:
            raise ValueError(f"expected windows of length {self.t}")
        shape = raw_windows.shape
        normed = self.normalizer.transform(
            raw_windows.reshape(-1, shape[2])).reshape(shape)
        pred, _ = self.network.forward(normed)
        coef_norm = self.normalizer.slice(self.coef_columns)
        out = np.maximum(coef_norm.inverse_transform(pred), 0.0)
        return out[0] if single else out


def predict_next(model: ForecastModel, last_frames: np.ndarray,
                 nmf_model: NmfModel) -> np.ndarray:
    """Next-window demand estimate: predict coefficients, multiply the basis."""
    coefs = model.predict_coefficients(np.asarray(last_frames))
    return nmf_inverse(nmf_model, coefs)


def save_forecast_model(model: ForecastModel, base_path: str | Path) -> None:
    base = Path(base_path)
    params = model.network.params()
    blob = base.with_suffix(".f64")
    arrays = dict(params)
    arrays["normalizer/mins"] = model.normalizer.mins
    arrays["normalizer/maxs"] = model.normalizer.maxs
    manifest = io.write_f64_arrays(blob, arrays)
    net = model.network
    io.write_json(base.with_suffix(".json"), {
        "cell_kind": net.cell_kind,
        "input_size": net.input_size,
        "hidden_sizes": list(net.hidden_sizes),
        "output_size": net.output_size,
        "extra_size": getattr(net, "extra_size", 0),
        "network_seed": net.seed,
        "t": model.t,
        "window_len_s": model.window_len_s,
        "coef_columns": [model.coef_columns.start, model.coef_columns.stop],
        "feature_names": model.feature_names,
        "train_mse": model.history.train_mse,
        "val_mse": model.history.val_mse,
        "config": {
            "learning_rate": model.config.learning_rate,
            "rmsprop_decay": model.config.rmsprop_decay,
            "epsilon": model.config.epsilon,
            "epochs": model.config.epochs,
            "batch_size": model.config.batch_size,
            "gradient_clip_norm": model.config.gradient_clip_norm,
            "seed": model.config.seed,
            "val_fraction": model.config.val_fraction,
            "early_stop_patience": model.config.early_stop_patience,
        },
        "weights_file": blob.name,
        "arrays": manifest,
    })


def load_forecast_model(base_path: str | Path) -> ForecastModel:
    base = Path(base_path)
    header = io.read_json(base.with_suffix(".json"))
    arrays = io.read_f64_arrays(base.parent / header["weights_file"], header["arrays"])
    kind = header["cell_kind"]
    if kind == "mlp":
        net = MlpNetwork(header["input_size"], tuple(header["hidden_sizes"]),
                         header["output_size"], seed=header["network_seed"])
    else:
        net = StackedRecurrentNetwork(
            header["input_size"], tuple(header["hidden_sizes"]),
            header["output_size"], cell_kind=kind, seed=header["network_seed"],
            extra_size=header["extra_size"])
    net.set_params({k: arrays[k] for k in net.params()})
    history = TrainHistory(train_mse=header["train_mse"], val_mse=header["val_mse"],
                           epochs=list(range(len(header["train_mse"]))))
    config = TrainConfig(**header["config"])
    return ForecastModel(
        network=net, t=header["t"],
        normalizer=MinMaxNormalizer(arrays["normalizer/mins"],
                                    arrays["normalizer/maxs"]),
        coef_columns=slice(header["coef_columns"][0], header["coef_columns"][1]),
        feature_names=header["feature_names"], history=history, config=config,
        window_len_s=header["window_len_s"],
    )


def save_training_log_csv(history: TrainHistory, path: str | Path) -> None:
    lines = ["epoch,train_mse,val_mse"]
    for e, tr, va in zip(history.epochs, history.train_mse, history.val_mse):
        lines.append(f"{e},{tr!r},{va!r}")
    Path(path).write_text("\n".join(lines) + "\n")
