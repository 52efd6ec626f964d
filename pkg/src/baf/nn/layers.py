"""Fixed layer zoo with manual forward/backward in float64.

Spatial batches are channels-last (B, H, W, C); Dense flattens whatever
trails the batch axis. Convolutions are 3x3, stride 1, zero padding 1, so
only pooling and upsampling change spatial resolution. The convolution is
an explicit im2col (nine block copies, one GEMM), which keeps the hot path
inside BLAS.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError

KERNEL = 3  # convolution kernels are always 3x3
PAD = 1

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")


def _xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Conv2D:
    """3x3 same-convolution mapping in_channels -> out_channels."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int):
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.params = {
            "W": np.zeros((out_channels, in_channels, KERNEL, KERNEL)),
            "b": np.zeros(out_channels),
        }
        self._scratch: dict = {}

    def _buf(self, name: str, shape: tuple) -> np.ndarray:
        # Reused per-shape work buffers; fresh large allocations would pay
        # page-fault cost on every batch. Layers are single-owner during
        # training, so this is safe.
        buf = self._scratch.get((name, shape))
        if buf is None:
            buf = np.empty(shape)
            self._scratch[(name, shape)] = buf
        return buf

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_scratch"] = {}  # work buffers never travel across processes
        return state

    def init_params(self, rng: np.random.Generator) -> None:
        fan_in = self.in_channels * KERNEL * KERNEL
        fan_out = self.out_channels * KERNEL * KERNEL
        self.params["W"] = _xavier_uniform(rng, self.params["W"].shape, fan_in, fan_out)
        self.params["b"] = np.zeros(self.out_channels)

    def _offset_weights(self) -> np.ndarray:
        # (9, c_in, c_out), one contiguous matrix per kernel offset in
        # row-major (i, j) order; strided views would knock matmul off BLAS.
        W = self.params["W"]
        return np.ascontiguousarray(W.transpose(2, 3, 1, 0)).reshape(
            KERNEL * KERNEL, self.in_channels, self.out_channels)

    def forward(self, x: np.ndarray):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise DataError(f"conv2d expects (B, H, W, {self.in_channels}), got {x.shape}")
        b, h, w, cin = x.shape
        xp = self._buf("xp", (b, h + 2 * PAD, w + 2 * PAD, cin))
        xp[:, :PAD, :, :] = 0.0
        xp[:, -PAD:, :, :] = 0.0
        xp[:, :, :PAD, :] = 0.0
        xp[:, :, -PAD:, :] = 0.0
        xp[:, PAD:-PAD, PAD:-PAD, :] = x
        # Nine contiguous shifted copies; each contributes one small GEMM.
        cols = self._buf("cols", (KERNEL * KERNEL, b, h, w, cin))
        k = 0
        for i in range(KERNEL):
            for j in range(KERNEL):
                cols[k] = xp[:, i:i + h, j:j + w, :]
                k += 1
        flat = cols.reshape(KERNEL * KERNEL, b * h * w, cin)
        ws = self._offset_weights()
        tmp = self._buf("gemm_fwd", (b * h * w, self.out_channels))
        y = np.empty((b * h * w, self.out_channels))
        y[:] = self.params["b"]
        for k in range(KERNEL * KERNEL):
            np.matmul(flat[k], ws[k], out=tmp)
            y += tmp
        return y.reshape(b, h, w, self.out_channels), (flat, x.shape)

    def backward(self, cache, dy: np.ndarray):
        flat, x_shape = cache
        b, h, w, cin = x_shape
        dyf = np.ascontiguousarray(dy.reshape(-1, self.out_channels))
        db = dyf.sum(axis=0)
        ws = self._offset_weights()
        dW9 = np.empty((KERNEL * KERNEL, cin, self.out_channels))
        dxp = self._buf("dxp", (b, h + 2 * PAD, w + 2 * PAD, cin))
        dxp[:] = 0.0
        dcol = self._buf("gemm_bwd", (b * h * w, cin))
        k = 0
        for i in range(KERNEL):
            for j in range(KERNEL):
                np.matmul(flat[k].T, dyf, out=dW9[k])
                np.matmul(dyf, ws[k].T, out=dcol)
                dxp[:, i:i + h, j:j + w, :] += dcol.reshape(b, h, w, cin)
                k += 1
        dW = np.ascontiguousarray(
            dW9.reshape(KERNEL, KERNEL, cin, self.out_channels).transpose(3, 2, 0, 1))
        dx = dxp[:, PAD:-PAD, PAD:-PAD, :].copy()
        return dx, {"W": dW, "b": db}

    def spec(self) -> dict:
        return {"kind": self.kind, "in_channels": self.in_channels, "out_channels": self.out_channels}


class MaxPool2x2:
    """2x2 max pooling; gradient goes only to the argmax, ties to the lowest window index."""

    kind = "maxpool"
    params: dict = {}

    def init_params(self, rng) -> None:
        pass

    @staticmethod
    def _windows(x: np.ndarray) -> np.ndarray:
        b, h, w, c = x.shape
        xr = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
        return xr.reshape(b, h // 2, w // 2, 4, c)

    def forward(self, x: np.ndarray):
        if x.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
            raise DataError(f"maxpool needs even H and W, got {x.shape}")
        xr = self._windows(x)
        idx = xr.argmax(axis=3)  # np.argmax resolves ties to the lowest index
        y = np.take_along_axis(xr, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        return y, (idx, x.shape)

    def backward(self, cache, dy: np.ndarray):
        idx, x_shape = cache
        b, h, w, c = x_shape
        dxr = np.zeros((b, h // 2, w // 2, 4, c))
        np.put_along_axis(dxr, idx[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
        dx = dxr.reshape(b, h // 2, w // 2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(x_shape)
        return dx, {}

    def spec(self) -> dict:
        return {"kind": self.kind}


class Dense:
    """Affine layer over the flattened trailing axes; optionally reshapes its output."""

    kind = "dense"

    def __init__(self, in_features: int, out_features: int, out_shape: tuple[int, ...] | None = None):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.out_shape = tuple(out_shape) if out_shape is not None else None
        if self.out_shape is not None and int(np.prod(self.out_shape)) != self.out_features:
            raise DataError(f"out_shape {out_shape} does not hold {out_features} features")
        self.params = {"W": np.zeros((in_features, out_features)), "b": np.zeros(out_features)}

    def init_params(self, rng: np.random.Generator) -> None:
        self.params["W"] = _xavier_uniform(
            rng, (self.in_features, self.out_features), self.in_features, self.out_features
        )
        self.params["b"] = np.zeros(self.out_features)

    def forward(self, x: np.ndarray):
        b = x.shape[0]
        if int(np.prod(x.shape[1:])) != self.in_features:
            raise DataError(f"dense expects {self.in_features} features, got shape {x.shape}")
        xf = x.reshape(b, self.in_features)
        y = xf @ self.params["W"] + self.params["b"]
        if self.out_shape is not None:
            y = y.reshape((b,) + self.out_shape)
        return y, (xf, x.shape)

    def backward(self, cache, dy: np.ndarray):
        xf, x_shape = cache
        dyf = dy.reshape(xf.shape[0], self.out_features)
        dW = xf.T @ dyf
        db = dyf.sum(axis=0)
        dx = (dyf @ self.params["W"].T).reshape(x_shape)
        return dx, {"W": dW, "b": db}

    def spec(self) -> dict:
        return {
            "kind": self.kind,
            "in_features": self.in_features,
            "out_features": self.out_features,
            "out_shape": list(self.out_shape) if self.out_shape is not None else None,
        }


class Upsample2x:
    """Nearest-neighbour 2x spatial upsampling."""

    kind = "upsample"
    params: dict = {}

    def init_params(self, rng) -> None:
        pass

    def forward(self, x: np.ndarray):
        if x.ndim != 4:
            raise DataError(f"upsample expects (B, H, W, C), got {x.shape}")
        y = x.repeat(2, axis=1).repeat(2, axis=2)
        return y, x.shape

    def backward(self, cache, dy: np.ndarray):
        b, h, w, c = cache
        dx = dy.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4))
        return dx, {}

    def spec(self) -> dict:
        return {"kind": self.kind}


class Activation:
    kind = "activation"
    params: dict = {}

    def __init__(self, fn: str):
        if fn not in ACTIVATIONS:
            raise DataError(f"unknown activation {fn!r}")
        self.fn = fn

    def init_params(self, rng) -> None:
        pass

    def forward(self, x: np.ndarray):
        if self.fn == "relu":
            return np.maximum(x, 0.0), x
        if self.fn == "sigmoid":
            y = _sigmoid(x)
            return y, y
        if self.fn == "tanh":
            y = np.tanh(x)
            return y, y
        return x, None

    def backward(self, cache, dy: np.ndarray):
        if self.fn == "relu":
            return dy * (cache > 0), {}
        if self.fn == "sigmoid":
            return dy * cache * (1.0 - cache), {}
        if self.fn == "tanh":
            return dy * (1.0 - cache * cache), {}
        return dy, {}

    def spec(self) -> dict:
        return {"kind": self.kind, "fn": self.fn}


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


LAYER_KINDS = {
    Conv2D.kind: Conv2D,
    MaxPool2x2.kind: MaxPool2x2,
    Dense.kind: Dense,
    Upsample2x.kind: Upsample2x,
    Activation.kind: Activation,
}


def layer_from_spec(spec: dict):
    kind = spec.get("kind")
    if kind == Conv2D.kind:
        return Conv2D(spec["in_channels"], spec["out_channels"])
    if kind == MaxPool2x2.kind:
        return MaxPool2x2()
    if kind == Dense.kind:
        out_shape = spec.get("out_shape")
        return Dense(spec["in_features"], spec["out_features"],
                     tuple(out_shape) if out_shape else None)
    if kind == Upsample2x.kind:
        return Upsample2x()
    if kind == Activation.kind:
        return Activation(spec["fn"])
    raise DataError(f"unknown layer kind {kind!r}")


class Network:
    """An ordered layer stack with a stable parameter registry."""

    def __init__(self, layers: list):
        self.layers = list(layers)
        seen = set()
        for pid in self.param_ids():
            if pid in seen:
                raise DataError(f"duplicate parameter id {pid}")
            seen.add(pid)

    def param_ids(self) -> list[str]:
        ids = []
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                ids.append(f"L{i}.{name}")
        return ids

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                out[f"L{i}.{name}"] = layer.params[name]
        return out

    def set_parameter(self, pid: str, value: np.ndarray) -> None:
        loc, name = pid.split(".", 1)
        layer = self.layers[int(loc[1:])]
        if layer.params[name].shape != value.shape:
            raise DataError(f"shape mismatch for {pid}")
        layer.params[name] = np.asarray(value, dtype=np.float64)

    def init_params(self, rng: np.random.Generator) -> None:
        for layer in self.layers:
            layer.init_params(rng)

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches: list, dy: np.ndarray):
        """Return (input gradient, gradients keyed by parameter id)."""
        if len(caches) != len(self.layers):
            raise DataError("cache does not match network (stale forward?)")
        grads: dict[str, np.ndarray] = {}
        for i in range(len(self.layers) - 1, -1, -1):
            dy, layer_grads = self.layers[i].backward(caches[i], dy)
            for name, g in layer_grads.items():
                grads[f"L{i}.{name}"] = g
        return dy, grads

    def specs(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]

    @classmethod
    def from_specs(cls, specs: list[dict]) -> "Network":
        return cls([layer_from_spec(s) for s in specs])
