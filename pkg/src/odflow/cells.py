"""Recurrent cells (simple sigmoid RNN, LSTM, GRU) with exact backward passes.

All math is plain numpy. Step functions operate on one time step; the layer
classes unroll a whole (batch, time, features) sequence and implement
backpropagation through time, returning analytic gradients for every weight
plus the gradient w.r.t. the layer input sequence (needed because upper
layers consume lower-layer outputs concatenated with the raw input).

Weight shapes: W (hidden, input), U (hidden, hidden), b (hidden,). Gate
naming follows the usual letters: f/i/c/o for LSTM, z/r/h for GRU.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    """Logistic function, numerically stable across the float64 range."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _check_step_shapes(params, x, h_prev, hidden, input_size):
    if x.shape[-1] != input_size:
        raise ValueError(f"input width {x.shape[-1]}, expected {input_size}")
    if h_prev.shape[-1] != hidden:
        raise ValueError(f"state width {h_prev.shape[-1]}, expected {hidden}")


def rnn_step(params: dict, x: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    """h_t = sigmoid(W x_t + U h_{t-1} + b)."""
    squeeze = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h_prev = np.atleast_2d(np.asarray(h_prev, dtype=np.float64))
    w, u, b = params["W"], params["U"], params["b"]
    _check_step_shapes(params, x, h_prev, u.shape[0], w.shape[1])
    h = sigmoid(x @ w.T + h_prev @ u.T + b)
    return h[0] if squeeze else h


def lstm_step(params: dict, x: np.ndarray, h_prev: np.ndarray,
              c_prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forget/input/output-gated memory update.

    c_t = f * c_{t-1} + i * tanh(W_c x + U_c h + b_c);  h_t = o * tanh(c_t).
    """
    squeeze = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h_prev = np.atleast_2d(np.asarray(h_prev, dtype=np.float64))
    c_prev = np.atleast_2d(np.asarray(c_prev, dtype=np.float64))
    _check_step_shapes(params, x, h_prev, params["U_f"].shape[0], params["W_f"].shape[1])
    f = sigmoid(x @ params["W_f"].T + h_prev @ params["U_f"].T + params["b_f"])
    i = sigmoid(x @ params["W_i"].T + h_prev @ params["U_i"].T + params["b_i"])
    g = np.tanh(x @ params["W_c"].T + h_prev @ params["U_c"].T + params["b_c"])
    o = sigmoid(x @ params["W_o"].T + h_prev @ params["U_o"].T + params["b_o"])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    if squeeze:
        return h[0], c[0]
    return h, c


def gru_step(params: dict, x: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    """Update/reset-gated state: h_t = (1 - z) h_{t-1} + z tanh(W x + U (r h) + b)."""
    squeeze = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h_prev = np.atleast_2d(np.asarray(h_prev, dtype=np.float64))
    _check_step_shapes(params, x, h_prev, params["U_z"].shape[0], params["W_z"].shape[1])
    z = sigmoid(x @ params["W_z"].T + h_prev @ params["U_z"].T + params["b_z"])
    r = sigmoid(x @ params["W_r"].T + h_prev @ params["U_r"].T + params["b_r"])
    n = np.tanh(x @ params["W_h"].T + (r * h_prev) @ params["U_h"].T + params["b_h"])
    h = (1.0 - z) * h_prev + z * n
    return h[0] if squeeze else h


class _LayerBase:
    kind = ""
    param_names: tuple[str, ...] = ()

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.params: dict[str, np.ndarray] = {}
        for name in self.param_names:
            if name.startswith("W"):
                self.params[name] = glorot_uniform(rng, (hidden_size, input_size))
            elif name.startswith("U"):
                self.params[name] = glorot_uniform(rng, (hidden_size, hidden_size))
            else:
                self.params[name] = np.zeros(hidden_size)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.params.items()}


class SimpleRnnLayer(_LayerBase):
    kind = "rnn"
    param_names = ("W", "U", "b")

    def forward(self, x_seq: np.ndarray):
        batch, steps, _ = x_seq.shape
        h_seq = np.zeros((batch, steps, self.hidden_size))
        h = np.zeros((batch, self.hidden_size))
        for t in range(steps):
            h = rnn_step(self.params, x_seq[:, t], h)
            h_seq[:, t] = h
        return h_seq, (x_seq, h_seq)

    def backward(self, cache, dh_seq: np.ndarray):
        x_seq, h_seq = cache
        batch, steps, _ = x_seq.shape
        grads = self.zero_grads()
        dx_seq = np.zeros_like(x_seq)
        carry = np.zeros((batch, self.hidden_size))
        for t in range(steps - 1, -1, -1):
            h_t = h_seq[:, t]
            h_prev = h_seq[:, t - 1] if t > 0 else np.zeros_like(h_t)
            dh = dh_seq[:, t] + carry
            da = dh * h_t * (1.0 - h_t)
            grads["W"] += da.T @ x_seq[:, t]
            grads["U"] += da.T @ h_prev
            grads["b"] += da.sum(axis=0)
            dx_seq[:, t] = da @ self.params["W"]
            carry = da @ self.params["U"]
        return dx_seq, grads


class LstmLayer(_LayerBase):
    kind = "lstm"
    param_names = ("W_f", "U_f", "b_f", "W_i", "U_i", "b_i",
                   "W_c", "U_c", "b_c", "W_o", "U_o", "b_o")

    def forward(self, x_seq: np.ndarray):
        batch, steps, _ = x_seq.shape
        hs = self.hidden_size
        p = self.params
        gates = {name: np.zeros((batch, steps, hs)) for name in ("f", "i", "g", "o")}
        c_seq = np.zeros((batch, steps, hs))
        h_seq = np.zeros((batch, steps, hs))
        h = np.zeros((batch, hs))
        c = np.zeros((batch, hs))
        for t in range(steps):
            x = x_seq[:, t]
            f = sigmoid(x @ p["W_f"].T + h @ p["U_f"].T + p["b_f"])
            i = sigmoid(x @ p["W_i"].T + h @ p["U_i"].T + p["b_i"])
            g = np.tanh(x @ p["W_c"].T + h @ p["U_c"].T + p["b_c"])
            o = sigmoid(x @ p["W_o"].T + h @ p["U_o"].T + p["b_o"])
            c = f * c + i * g
            h = o * np.tanh(c)
            for name, val in zip(("f", "i", "g", "o"), (f, i, g, o)):
                gates[name][:, t] = val
            c_seq[:, t] = c
            h_seq[:, t] = h
        return h_seq, (x_seq, h_seq, c_seq, gates)

    def backward(self, cache, dh_seq: np.ndarray):
        x_seq, h_seq, c_seq, gates = cache
        batch, steps, _ = x_seq.shape
        p = self.params
        grads = self.zero_grads()
        dx_seq = np.zeros_like(x_seq)
        carry_h = np.zeros((batch, self.hidden_size))
        carry_c = np.zeros((batch, self.hidden_size))
        for t in range(steps - 1, -1, -1):
            h_prev = h_seq[:, t - 1] if t > 0 else np.zeros((batch, self.hidden_size))
            c_prev = c_seq[:, t - 1] if t > 0 else np.zeros((batch, self.hidden_size))
            f, i, g, o = (gates[n][:, t] for n in ("f", "i", "g", "o"))
            tc = np.tanh(c_seq[:, t])
            dh = dh_seq[:, t] + carry_h
            do = dh * tc
            dao = do * o * (1.0 - o)
            dc = dh * o * (1.0 - tc * tc) + carry_c
            daf = dc * c_prev * f * (1.0 - f)
            dai = dc * g * i * (1.0 - i)
            dag = dc * i * (1.0 - g * g)
            carry_c = dc * f
            x = x_seq[:, t]
            for da, gate in zip((daf, dai, dag, dao), ("f", "i", "c", "o")):
                grads[f"W_{gate}"] += da.T @ x
                grads[f"U_{gate}"] += da.T @ h_prev
                grads[f"b_{gate}"] += da.sum(axis=0)
            dx_seq[:, t] = (dao @ p["W_o"] + daf @ p["W_f"]
                            + dai @ p["W_i"] + dag @ p["W_c"])
            carry_h = (dao @ p["U_o"] + daf @ p["U_f"]
                       + dai @ p["U_i"] + dag @ p["U_c"])
        return dx_seq, grads


class GruLayer(_LayerBase):
    kind = "gru"
    param_names = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")

    def forward(self, x_seq: np.ndarray):
        batch, steps, _ = x_seq.shape
        hs = self.hidden_size
        p = self.params
        gates = {name: np.zeros((batch, steps, hs)) for name in ("z", "r", "n")}
        h_seq = np.zeros((batch, steps, hs))
        h = np.zeros((batch, hs))
        for t in range(steps):
            x = x_seq[:, t]
            z = sigmoid(x @ p["W_z"].T + h @ p["U_z"].T + p["b_z"])
            r = sigmoid(x @ p["W_r"].T + h @ p["U_r"].T + p["b_r"])
            n = np.tanh(x @ p["W_h"].T + (r * h) @ p["U_h"].T + p["b_h"])
            h = (1.0 - z) * h + z * n
            for name, val in zip(("z", "r", "n"), (z, r, n)):
                gates[name][:, t] = val
            h_seq[:, t] = h
        return h_seq, (x_seq, h_seq, gates)

    def backward(self, cache, dh_seq: np.ndarray):
        x_seq, h_seq, gates = cache
        batch, steps, _ = x_seq.shape
        p = self.params
        grads = self.zero_grads()
        dx_seq = np.zeros_like(x_seq)
        carry = np.zeros((batch, self.hidden_size))
        for t in range(steps - 1, -1, -1):
            h_prev = h_seq[:, t - 1] if t > 0 else np.zeros((batch, self.hidden_size))
            z, r, n = (gates[name][:, t] for name in ("z", "r", "n"))
            dh = dh_seq[:, t] + carry
            dz = dh * (n - h_prev)
            daz = dz * z * (1.0 - z)
            dn = dh * z
            dan = dn * (1.0 - n * n)
            drh = dan @ p["U_h"]          # gradient w.r.t. (r * h_prev)
            dar = drh * h_prev * r * (1.0 - r)
            x = x_seq[:, t]
            grads["W_z"] += daz.T @ x
            grads["U_z"] += daz.T @ h_prev
            grads["b_z"] += daz.sum(axis=0)
            grads["W_r"] += dar.T @ x
            grads["U_r"] += dar.T @ h_prev
            grads["b_r"] += dar.sum(axis=0)
            grads["W_h"] += dan.T @ x
            grads["U_h"] += dan.T @ (r * h_prev)
            grads["b_h"] += dan.sum(axis=0)
            dx_seq[:, t] = dan @ p["W_h"] + dar @ p["W_r"] + daz @ p["W_z"]
            carry = dh * (1.0 - z) + drh * r + dar @ p["U_r"] + daz @ p["U_z"]
        return dx_seq, grads


LAYER_CLASSES = {cls.kind: cls for cls in (SimpleRnnLayer, LstmLayer, GruLayer)}


def make_layer(kind: str, input_size: int, hidden_size: int,
               rng: np.random.Generator):
    try:
        cls = LAYER_CLASSES[kind]
    except KeyError:
        raise ValueError(f"unknown cell kind {kind!r}; expected one of "
                         f"{sorted(LAYER_CLASSES)}") from None
    return cls(input_size, hidden_size, rng)
