"""Stacked recurrent forecaster and the dense-layer reference network.

The stack wires three recurrent layers so that layer 1 reads the raw input
sequence and layers 2 and 3 read the previous layer's output sequence
concatenated with the raw input at every step. The last hidden state of the
top layer feeds an affine head with identity activation; per-step cell
outputs exist only to feed the next layer.
"""

from __future__ import annotations

import numpy as np

from odflow.cells import glorot_uniform, make_layer, sigmoid

CELL_KINDS = ("rnn", "lstm", "gru")


def mse_loss(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Mean of squared errors over every window and output component."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(f"shape mismatch {predictions.shape} vs {targets.shape}")
    diff = predictions - targets
    return float(np.mean(diff * diff))


def mse_loss_grad(predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return 2.0 * (predictions - targets) / predictions.size


class StackedRecurrentNetwork:
    """Three recurrent layers with raw-input re-concatenation plus a linear head.

    `extra_size > 0` reserves additional head inputs (e.g. the target
    window's forecast weather) appended after the extracted feature vector.
    """

    def __init__(self, input_size: int, hidden_sizes: tuple[int, int, int],
                 output_size: int, cell_kind: str = "gru", seed: int = 0,
                 extra_size: int = 0):
        if cell_kind not in CELL_KINDS:
            raise ValueError(f"cell_kind must be one of {CELL_KINDS}")
        if len(hidden_sizes) != 3:
            raise ValueError("expected exactly three hidden sizes")
        rng = np.random.default_rng(seed)
        self.cell_kind = cell_kind
        self.input_size = input_size
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.output_size = output_size
        self.extra_size = extra_size
        self.seed = seed
        h1, h2, h3 = self.hidden_sizes
        self.layers = [
            make_layer(cell_kind, input_size, h1, rng),
            make_layer(cell_kind, h1 + input_size, h2, rng),
            make_layer(cell_kind, h2 + input_size, h3, rng),
        ]
        self.head_w = glorot_uniform(rng, (output_size, h3 + extra_size))
        self.head_b = np.zeros(output_size)

    # --- parameter registry (declared order; persistence relies on it) ---

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for idx, layer in enumerate(self.layers, start=1):
            for name in layer.param_names:
                out[f"layer{idx}/{name}"] = layer.params[name]
        out["head/W"] = self.head_w
        out["head/b"] = self.head_b
        return out

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        for idx, layer in enumerate(self.layers, start=1):
            for name in layer.param_names:
                layer.params[name] = values[f"layer{idx}/{name}"]
        self.head_w = values["head/W"]
        self.head_b = values["head/b"]

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    # --- forward / backward ---

    def forward(self, x_seq: np.ndarray, extra: np.ndarray | None = None):
        """Map (batch, t, input_size) windows to (batch, output_size) estimates.

        Returns (predictions, cache); cache feeds `backward`.
        """
        x_seq = np.asarray(x_seq, dtype=np.float64)
        if x_seq.ndim != 3 or x_seq.shape[2] != self.input_size:
            raise ValueError(
                f"expected (batch, t, {self.input_size}) input, got {x_seq.shape}")
        if self.extra_size:
            if extra is None or extra.shape != (x_seq.shape[0], self.extra_size):
                raise ValueError("extra head inputs missing or mis-shaped")
        h1, cache1 = self.layers[0].forward(x_seq)
        x2 = np.concatenate([h1, x_seq], axis=2)
        h2, cache2 = self.layers[1].forward(x2)
        x3 = np.concatenate([h2, x_seq], axis=2)
        h3, cache3 = self.layers[2].forward(x3)
        features = h3[:, -1, :]
        head_in = features if not self.extra_size else np.concatenate(
            [features, extra], axis=1)
        y = head_in @ self.head_w.T + self.head_b
        return y, (cache1, cache2, cache3, head_in, x_seq.shape)

    def extract_features(self, x_seq: np.ndarray) -> np.ndarray:
        """Last hidden state of the top layer, before the head."""
        cache = self.forward(x_seq, extra=np.zeros((len(x_seq), self.extra_size))
                             if self.extra_size else None)[1]
        return cache[3][:, :self.hidden_sizes[2]]

    def backward(self, cache, dy: np.ndarray):
        cache1, cache2, cache3, head_in, x_shape = cache
        batch, steps, _ = x_shape
        h1, h2, h3 = self.hidden_sizes
        grads: dict[str, np.ndarray] = {}
        grads["head/W"] = dy.T @ head_in
        grads["head/b"] = dy.sum(axis=0)
        dhead_in = dy @ self.head_w
        dfeat = dhead_in[:, :h3]  # gradient w.r.t. extra inputs is discarded

        dh3 = np.zeros((batch, steps, h3))
        dh3[:, -1, :] = dfeat
        dx3, g3 = self.layers[2].backward(cache3, dh3)
        dh2 = dx3[:, :, :h2]
        dx_direct3 = dx3[:, :, h2:]
        dx2, g2 = self.layers[1].backward(cache2, dh2)
        dh1 = dx2[:, :, :h1]
        dx_direct2 = dx2[:, :, h1:]
        dx1, g1 = self.layers[0].backward(cache1, dh1)
        dx = dx1 + dx_direct2 + dx_direct3

        for idx, layer_grads in enumerate((g1, g2, g3), start=1):
            for name, val in layer_grads.items():
                grads[f"layer{idx}/{name}"] = val
        return dx, grads


class MlpNetwork:
    """Three sigmoid dense layers over the flattened window, linear head.

    Mirrors the recurrent model's head, loss, and training contract; only
    the feature extraction differs.
    """

    def __init__(self, input_size: int, hidden_sizes: tuple[int, int, int],
                 output_size: int, seed: int = 0):
        if len(hidden_sizes) != 3:
            raise ValueError("expected exactly three hidden sizes")
        rng = np.random.default_rng(seed)
        self.input_size = input_size
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.output_size = output_size
        self.seed = seed
        self.cell_kind = "mlp"
        widths = [input_size, *self.hidden_sizes]
        self.weights = [glorot_uniform(rng, (widths[i + 1], widths[i]))
                        for i in range(3)]
        self.biases = [np.zeros(widths[i + 1]) for i in range(3)]
        self.head_w = glorot_uniform(rng, (output_size, self.hidden_sizes[-1]))
        self.head_b = np.zeros(output_size)

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i in range(3):
            out[f"layer{i + 1}/W"] = self.weights[i]
            out[f"layer{i + 1}/b"] = self.biases[i]
        out["head/W"] = self.head_w
        out["head/b"] = self.head_b
        return out

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        for i in range(3):
            self.weights[i] = values[f"layer{i + 1}/W"]
            self.biases[i] = values[f"layer{i + 1}/b"]
        self.head_w = values["head/W"]
        self.head_b = values["head/b"]

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def forward(self, x_seq: np.ndarray, extra: np.ndarray | None = None):
        x = np.asarray(x_seq, dtype=np.float64)
        if x.ndim == 3:
            x = x.reshape(len(x), -1)
        if x.shape[1] != self.input_size:
            raise ValueError(f"expected flattened width {self.input_size}, got {x.shape[1]}")
        activations = [x]
        for w, b in zip(self.weights, self.biases):
            x = sigmoid(x @ w.T + b)
            activations.append(x)
        y = x @ self.head_w.T + self.head_b
        return y, activations

    def backward(self, cache, dy: np.ndarray):
        activations = cache
        grads: dict[str, np.ndarray] = {}
        grads["head/W"] = dy.T @ activations[-1]
        grads["head/b"] = dy.sum(axis=0)
        dh = dy @ self.head_w
        for i in range(2, -1, -1):
            h = activations[i + 1]
            da = dh * h * (1.0 - h)
            grads[f"layer{i + 1}/W"] = da.T @ activations[i]
            grads[f"layer{i + 1}/b"] = da.sum(axis=0)
            dh = da @ self.weights[i]
        return dh, grads
