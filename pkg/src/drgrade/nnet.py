"""Minimal differentiable network for ordinal severity regression.

A small conv backbone feeds a dropout + single-output dense head; the head
regresses a continuous severity score trained with MSE against the integer
grade. Gradients are hand-derived per layer kind (no autograd). Training
runs in float32; gradient-check tests rebuild layers in float64.

Determinism contract: weight init, shuffling and dropout masks all draw from
one Xoshiro256StarStar stream, in a fixed order (layers in order, weights
row-major; per epoch: shuffle, then per batch one mask element per
activation, row-major). (seed, data, config) fully determine the final
weights.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import __version__
from .grading import decode_score, confusion, qwk, DegenerateAgreementError, GRADE_COUNT
from .rng import Xoshiro256StarStar

CHECKPOINT_FORMAT = "drgrade-checkpoint-v1"


class DivergenceError(RuntimeError):
    """A forward/backward pass or the training loss became non-finite."""


class CheckpointError(ValueError):
    """Malformed checkpoint file or architecture mismatch."""


def _guard_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise DivergenceError(f"non-finite values in {where}")


# ---------------------------------------------------------------------------
# layers


class Layer:
    kind = "?"

    def __init__(self):
        self.frozen = False
        self._cache = None

    def params(self) -> list[np.ndarray]:
        return []

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return []

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def config(self) -> dict:
        return {}

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout, need_dx=True):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called without a preceding forward")
        return self._cache


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, weights: np.ndarray, bias: np.ndarray, stride: int = 1, frozen: bool = False):
        super().__init__()
        weights = np.asarray(weights)
        bias = np.asarray(bias)
        if weights.ndim != 4:
            raise ValueError(f"conv weights must be (out_c, in_c, kh, kw), got {weights.shape}")
        if bias.shape != (weights.shape[0],):
            raise ValueError(f"conv bias shape {bias.shape} does not match {weights.shape[0]} filters")
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.weights = weights
        self.bias = bias
        self.stride = stride
        self.frozen = frozen

    def params(self):
        return [self.weights, self.bias]

    def named_params(self):
        return [("weights", self.weights), ("bias", self.bias)]

    def config(self):
        return {"stride": self.stride}

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ValueError(f"conv2d expects (c, h, w) input, got {in_shape}")
        c, h, w = in_shape
        out_c, in_c, kh, kw = self.weights.shape
        if c != in_c:
            raise ValueError(f"conv2d expects {in_c} input channels, got {c}")
        oh = (h - kh) // self.stride + 1
        ow = (w - kw) // self.stride + 1
        if h < kh or w < kw or oh < 1 or ow < 1:
            raise ValueError(f"conv2d kernel {kh}x{kw} does not fit input {h}x{w}")
        return (out_c, oh, ow)

    def _cols(self, xi):
        # im2col: rows are output positions, columns are (c, ky, kx) taps
        _, kh, kw = self.weights.shape[1:]
        s = self.stride
        view = sliding_window_view(xi, (kh, kw), axis=(1, 2))[:, ::s, ::s]
        cin, oh, ow = view.shape[:3]
        return view.transpose(1, 2, 0, 3, 4).reshape(oh * ow, cin * kh * kw), oh, ow

    def forward(self, x, train=False, rng=None):
        n = x.shape[0]
        out_c, in_c, kh, kw = self.weights.shape
        if x.ndim != 4 or x.shape[1] != in_c:
            raise ValueError(f"conv2d expects (n, {in_c}, h, w) input, got {x.shape}")
        wr = self.weights.reshape(out_c, -1)
        out = None
        for i in range(n):
            cols, oh, ow = self._cols(x[i])
            if out is None:
                out = np.empty((n, out_c, oh, ow), dtype=x.dtype)
            out[i] = (cols @ wr.T).T.reshape(out_c, oh, ow)
        out += self.bias[None, :, None, None]
        self._cache = x
        return out

    def backward(self, dout, need_dx=True):
        x = self._take_cache()
        n = x.shape[0]
        out_c, in_c, kh, kw = self.weights.shape
        s = self.stride
        oh, ow = dout.shape[2], dout.shape[3]
        wr = self.weights.reshape(out_c, -1)
        dw = None if self.frozen else np.zeros_like(self.weights)
        db = None if self.frozen else np.zeros_like(self.bias)
        dx = np.zeros_like(x) if need_dx else None
        for i in range(n):
            g = dout[i].reshape(out_c, oh * ow)
            if not self.frozen:
                cols, _, _ = self._cols(x[i])
                dw += (g @ cols).reshape(self.weights.shape)
                db += g.sum(axis=1)
            if need_dx:
                dcols = (g.T @ wr).reshape(oh, ow, in_c, kh, kw).transpose(2, 0, 1, 3, 4)
                for ky in range(kh):
                    for kx in range(kw):
                        dx[i][:, ky:ky + s * oh:s, kx:kx + s * ow:s] += dcols[:, :, :, ky, kx]
        grads = None if self.frozen else (dw, db)
        return dx, grads


class Relu(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        self._cache = x > 0
        return np.maximum(x, 0)

    def backward(self, dout, need_dx=True):
        mask = self._take_cache()
        return (dout * mask if need_dx else None), None


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, window: int = 2, stride: int | None = None, frozen: bool = False):
        super().__init__()
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.stride = window if stride is None else stride
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        self.frozen = frozen

    def config(self):
        return {"window": self.window, "stride": self.stride}

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ValueError(f"maxpool2d expects (c, h, w) input, got {in_shape}")
        c, h, w = in_shape
        oh = (h - self.window) // self.stride + 1
        ow = (w - self.window) // self.stride + 1
        if h < self.window or w < self.window or oh < 1 or ow < 1:
            raise ValueError(f"maxpool2d window {self.window} does not fit input {h}x{w}")
        return (c, oh, ow)

    def forward(self, x, train=False, rng=None):
        k, s = self.window, self.stride
        view = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        n, c, oh, ow = view.shape[:4]
        flat = view.reshape(n, c, oh, ow, k * k)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, arg)
        return out

    def backward(self, dout, need_dx=True):
        x_shape, arg = self._take_cache()
        if not need_dx:
            return None, None
        n, c, oh, ow = arg.shape
        k, s = self.window, self.stride
        dx = np.zeros(x_shape, dtype=dout.dtype)
        rows = np.arange(oh)[None, None, :, None] * s + arg // k
        cols = np.arange(ow)[None, None, None, :] * s + arg % k
        nn = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        np.add.at(dx, (nn, cc, rows, cols), dout)
        return dx, None


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, need_dx=True):
        shape = self._take_cache()
        return (dout.reshape(shape) if need_dx else None), None


class Dense(Layer):
    kind = "dense"

    def __init__(self, weights: np.ndarray, bias: np.ndarray, frozen: bool = False):
        super().__init__()
        weights = np.asarray(weights)
        bias = np.asarray(bias)
        if weights.ndim != 2:
            raise ValueError(f"dense weights must be (out_dim, in_dim), got {weights.shape}")
        if bias.shape != (weights.shape[0],):
            raise ValueError(f"dense bias shape {bias.shape} does not match out_dim {weights.shape[0]}")
        self.weights = weights
        self.bias = bias
        self.frozen = frozen

    def params(self):
        return [self.weights, self.bias]

    def named_params(self):
        return [("weights", self.weights), ("bias", self.bias)]

    @property
    def out_dim(self):
        return self.weights.shape[0]

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.weights.shape[1]:
            raise ValueError(f"dense expects ({self.weights.shape[1]},) input, got {in_shape}")
        return (self.weights.shape[0],)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.weights.shape[1]:
            raise ValueError(f"dense expects (n, {self.weights.shape[1]}) input, got {x.shape}")
        self._cache = x
        return x @ self.weights.T + self.bias

    def backward(self, dout, need_dx=True):
        x = self._take_cache()
        grads = None
        if not self.frozen:
            grads = (dout.T @ x, dout.sum(axis=0))
        dx = dout @ self.weights if need_dx else None
        return dx, grads


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float = 0.2, frozen: bool = False):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.frozen = frozen

    def config(self):
        return {"rate": self.rate}

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._cache = ("identity", None)
            return x
        if rng is None:
            raise RuntimeError("dropout in train mode requires an rng")
        u = rng.uniform_array(x.size).reshape(x.shape)
        # inverted dropout: kept activations scale by 1/(1-p), eval is identity
        mask = ((u >= self.rate) / (1.0 - self.rate)).astype(x.dtype)
        self._cache = ("mask", mask)
        return x * mask

    def backward(self, dout, need_dx=True):
        tag, mask = self._take_cache()
        if not need_dx:
            return None, None
        return (dout if tag == "identity" else dout * mask), None


# ---------------------------------------------------------------------------
# network


class Network:
    """Ordered layer stack ending in a single-output dense head."""

    def __init__(self, layers: list[Layer], input_shape: tuple):
        if not layers:
            raise ValueError("network needs at least one layer")
        last = layers[-1]
        if not isinstance(last, Dense) or last.out_dim != 1:
            raise ValueError("final layer must be a dense layer with out_dim == 1")
        shape = tuple(int(d) for d in input_shape)
        self.shapes = [shape]
        for i, layer in enumerate(layers):
            try:
                shape = layer.out_shape(shape)
            except ValueError as exc:
                raise ValueError(f"layer {i} ({layer.kind}): {exc}") from exc
            self.shapes.append(shape)
        self.layers = layers
        self.input_shape = tuple(int(d) for d in input_shape)
        self.mode = "train"

    def train_mode(self):
        self.mode = "train"

    def eval_mode(self):
        self.mode = "eval"

    def freeze_backbone(self):
        """Freeze every layer up to and including the flatten (the feature
        extractor); only the head keeps training."""
        for layer in self.layers:
            layer.frozen = True
            if layer.kind == "flatten":
                return
        raise ValueError("network has no flatten layer")

    def forward(self, x, rng=None, train: bool | None = None, start: int = 0):
        train = (self.mode == "train") if train is None else train
        x = np.asarray(x)
        if start == 0 and x.shape[1:] != self.input_shape:
            raise ValueError(f"expected input shape (n, {self.input_shape}), got {x.shape}")
        for layer in self.layers[start:]:
            x = layer.forward(x, train=train, rng=rng)
            _guard_finite(x, f"{layer.kind} forward output")
        return x

    def backward(self, loss_grad, stop: int = 0):
        """Reverse-mode pass; returns per-layer (dW, db) tuples, None for
        frozen or parameterless layers. Gradients propagate through frozen
        layers; ``stop`` skips layers before that index entirely."""
        grads: list = [None] * len(self.layers)
        g = np.asarray(loss_grad)
        for i in range(len(self.layers) - 1, stop - 1, -1):
            g, pg = self.layers[i].backward(g, need_dx=i > stop)
            grads[i] = pg
            if pg is not None:
                for arr in pg:
                    _guard_finite(arr, f"{self.layers[i].kind} parameter gradient")
            if g is not None:
                _guard_finite(g, f"{self.layers[i].kind} input gradient")
        return grads

    def num_params(self) -> int:
        return sum(p.size for layer in self.layers for p in layer.params())


def he_uniform(rng: Xoshiro256StarStar, shape: tuple, fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = float(np.sqrt(6.0 / fan_in))
    u = rng.uniform_array(int(np.prod(shape)))
    return ((2.0 * u - 1.0) * bound).reshape(shape).astype(dtype)


def build_reference_model(input_side: int, seed: int, dropout_rate: float = 0.2) -> Network:
    """Deterministic-from-seed reference model.

    conv(3->8, k3) / relu / maxpool2 / conv(8->16, k3) / relu / maxpool2 /
    flatten / dense->32 / relu / dropout / dense->1. He-uniform init
    (bound sqrt(6/fan_in)) drawn layer by layer from one seeded stream;
    biases start at zero.
    """
    if input_side < 8:
        raise ValueError(f"input_side must be >= 8, got {input_side}")
    h1 = input_side - 2
    p1 = h1 // 2
    h2 = p1 - 2
    p2 = h2 // 2
    if h1 < 2 or h2 < 2 or p2 < 1:
        raise ValueError(f"input side {input_side} is too small for two conv+pool stages")
    flat = 16 * p2 * p2
    rng = Xoshiro256StarStar(seed)
    layers = [
        Conv2d(he_uniform(rng, (8, 3, 3, 3), fan_in=3 * 3 * 3), np.zeros(8, np.float32)),
        Relu(),
        MaxPool2d(2),
        Conv2d(he_uniform(rng, (16, 8, 3, 3), fan_in=8 * 3 * 3), np.zeros(16, np.float32)),
        Relu(),
        MaxPool2d(2),
        Flatten(),
        Dense(he_uniform(rng, (32, flat), fan_in=flat), np.zeros(32, np.float32)),
        Relu(),
        Dropout(dropout_rate),
        Dense(he_uniform(rng, (1, 32), fan_in=32), np.zeros(1, np.float32)),
    ]
    return Network(layers, (3, input_side, input_side))


# ---------------------------------------------------------------------------
# loss, optimizers, training


def mse_loss(pred: np.ndarray, target) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient wrt the predictions.

    loss = mean((pred_i - y_i)^2), grad_i = 2 (pred_i - y_i) / n.
    """
    pred = np.asarray(pred)
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    flat = pred.reshape(-1)
    if flat.shape[0] != y.shape[0]:
        raise ValueError(f"length mismatch: {flat.shape[0]} predictions vs {y.shape[0]} targets")
    if flat.shape[0] == 0:
        raise ValueError("empty batch")
    diff = flat.astype(np.float64) - y
    loss = float(np.mean(diff * diff))
    grad = ((diff * (2.0 / y.shape[0])).astype(pred.dtype)).reshape(pred.shape)
    return loss, grad


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    epochs: int = 40
    batch_size: int = 32
    seed: int = 42
    optimizer: str = "adam"  # "sgd" | "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout_rate: float = 0.2

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a u64")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    def to_json_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    val_qwk: float | None


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, net: Network, grads: list) -> None:
        for layer, g in zip(net.layers, grads):
            if g is None or layer.frozen:
                continue
            for param, garr in zip(layer.params(), g):
                param -= self.lr * garr


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict = {}
        self._v: dict = {}

    def step(self, net: Network, grads: list) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, (layer, g) in enumerate(zip(net.layers, grads)):
            if g is None or layer.frozen:
                continue
            for j, (param, garr) in enumerate(zip(layer.params(), g)):
                key = (i, j)
                if key not in self._m:
                    self._m[key] = np.zeros_like(param)
                    self._v[key] = np.zeros_like(param)
                m = self._m[key]
                v = self._v[key]
                m *= self.beta1
                m += (1.0 - self.beta1) * garr
                v *= self.beta2
                v += (1.0 - self.beta2) * garr * garr
                param -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return Sgd(cfg.learning_rate)
    return Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)


def _deterministic_prefix_len(net: Network) -> int:
    """Longest frozen prefix whose train-mode output equals eval-mode output
    (no live dropout), so its activations can be computed once per run."""
    p = 0
    for layer in net.layers:
        if not layer.frozen:
            break
        if layer.kind == "dropout" and layer.rate > 0:
            break
        p += 1
    return p


def _forward_batched(net: Network, x: np.ndarray, start: int, stop: int, batch: int = 64) -> np.ndarray:
    chunks = []
    for lo in range(0, x.shape[0], batch):
        xb = x[lo:lo + batch]
        for layer in net.layers[start:stop]:
            xb = layer.forward(xb, train=False, rng=None)
            _guard_finite(xb, f"{layer.kind} forward output")
        chunks.append(xb)
    return np.concatenate(chunks, axis=0)


def train(net: Network, data, cfg: TrainConfig, val_data=None,
          use_prefix_cache: bool = True) -> list[EpochRecord]:
    """Train ``net`` in place; returns one record per epoch.

    ``data`` and ``val_data`` are sequences of (tensor, grade). The per-epoch
    loss is the mean squared error over all samples seen that epoch; val_qwk
    is the quadratic weighted kappa of decoded predictions on ``val_data``
    (None when no validation set is supplied).

    When an initial run of layers is frozen and deterministic, their
    activations are computed once and reused every epoch; this changes no
    numbers (the prefix would produce bit-identical outputs each pass), only
    the cost. Disable with ``use_prefix_cache=False`` to force full passes.
    """
    if len(data) == 0:
        raise ValueError("training data is empty")
    x = np.stack([np.asarray(t, dtype=np.float32) for t, _ in data])
    y = np.asarray([float(g) for _, g in data], dtype=np.float32)
    if x.shape[1:] != net.input_shape:
        raise ValueError(f"data shape {x.shape[1:]} does not match network input {net.input_shape}")
    rng = Xoshiro256StarStar(cfg.seed)
    opt = _make_optimizer(cfg)
    prefix = _deterministic_prefix_len(net) if use_prefix_cache else 0
    if prefix:
        x = _forward_batched(net, x, 0, prefix)
    val_x = val_truth = None
    if val_data is not None and len(val_data) > 0:
        val_x = np.stack([np.asarray(t, dtype=np.float32) for t, _ in val_data])
        val_truth = [int(g) for _, g in val_data]
        if prefix:
            val_x = _forward_batched(net, val_x, 0, prefix)
    n = x.shape[0]
    log: list[EpochRecord] = []
    net.train_mode()
    for epoch in range(1, cfg.epochs + 1):
        order = list(range(n))
        rng.shuffle(order)
        sq_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            pred = net.forward(x[idx], rng=rng, train=True, start=prefix)
            loss, grad = mse_loss(pred, y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"training loss became non-finite at epoch {epoch}")
            grads = net.backward(grad, stop=prefix)
            opt.step(net, grads)
            sq_sum += loss * len(idx)
        val_qwk = None
        if val_x is not None:
            scores = _forward_batched(net, val_x, prefix, len(net.layers)).reshape(-1)
            decoded = [decode_score(float(s)) for s in scores]
            try:
                val_qwk = qwk(confusion(val_truth, decoded, GRADE_COUNT)).qwk
            except DegenerateAgreementError:
                val_qwk = None
        log.append(EpochRecord(epoch=epoch, loss=sq_sum / n, val_qwk=val_qwk))
    return log


def predict(net: Network, batch) -> list[tuple[float, int]]:
    """Eval-mode forward + ordinal decode; returns (score, grade) pairs."""
    net.eval_mode()
    out = net.forward(np.asarray(batch, dtype=np.float32), train=False)
    return [(float(s), decode_score(float(s))) for s in out.reshape(-1)]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, net: Network, seed: int | None = None, epoch: int = 0) -> None:
    """Write a checkpoint: u32 little-endian header length, JSON header, then
    a raw little-endian float32 blob of all parameters (layers in order,
    weights then bias); the header records per-parameter byte offsets."""
    blob = bytearray()
    layers_meta = []
    for layer in net.layers:
        meta: dict = {"kind": layer.kind, "frozen": layer.frozen}
        meta.update(layer.config())
        for name, arr in layer.named_params():
            meta[f"{name}_offset"] = len(blob)
            meta[f"{name}_shape"] = list(arr.shape)
            blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
        layers_meta.append(meta)
    header = {
        "format": CHECKPOINT_FORMAT,
        "tool_version": __version__,
        "seed": seed,
        "mode": net.mode,
        "epoch": epoch,
        "input_shape": list(net.input_shape),
        "blob_bytes": len(blob),
        "layers": layers_meta,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(hb)))
        f.write(hb)
        f.write(bytes(blob))


def _read_param(blob: bytes, meta: dict, name: str) -> np.ndarray:
    shape = tuple(meta[f"{name}_shape"])
    offset = meta[f"{name}_offset"]
    nbytes = int(np.prod(shape)) * 4
    if offset + nbytes > len(blob):
        raise CheckpointError(f"parameter {name} overruns the checkpoint blob")
    return np.frombuffer(blob, dtype="<f4", count=int(np.prod(shape)),
                         offset=offset).reshape(shape).astype(np.float32)


def load_checkpoint(path) -> tuple[Network, dict]:
    """Rebuild a network from a checkpoint; returns (net, header_meta)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise CheckpointError(f"{path}: truncated checkpoint")
    (hlen,) = struct.unpack("<I", raw[:4])
    if len(raw) < 4 + hlen:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[4:4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint header: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown checkpoint format {header.get('format')!r}")
    blob = raw[4 + hlen:]
    if len(blob) != header.get("blob_bytes"):
        raise CheckpointError(f"{path}: blob length {len(blob)} does not match header "
                              f"{header.get('blob_bytes')}")
    layers: list[Layer] = []
    for meta in header["layers"]:
        kind = meta["kind"]
        frozen = bool(meta.get("frozen", False))
        if kind == "conv2d":
            layer: Layer = Conv2d(_read_param(blob, meta, "weights"),
                                  _read_param(blob, meta, "bias"),
                                  stride=meta["stride"], frozen=frozen)
        elif kind == "relu":
            layer = Relu()
            layer.frozen = frozen
        elif kind == "maxpool2d":
            layer = MaxPool2d(meta["window"], meta["stride"], frozen=frozen)
        elif kind == "flatten":
            layer = Flatten()
            layer.frozen = frozen
        elif kind == "dense":
            layer = Dense(_read_param(blob, meta, "weights"),
                          _read_param(blob, meta, "bias"), frozen=frozen)
        elif kind == "dropout":
            layer = Dropout(meta["rate"], frozen=frozen)
        else:
            raise CheckpointError(f"{path}: unknown layer kind {kind!r}")
        layers.append(layer)
    try:
        net = Network(layers, tuple(header["input_shape"]))
    except ValueError as exc:
        raise CheckpointError(f"{path}: inconsistent architecture: {exc}") from exc
    net.mode = header.get("mode", "eval")
    return net, header
