"""Float network graph and layer kernels.

Activations are (N, H, W, C) arrays; convolution weights are
(out, kh, kw, in) so that the flattened weight vector groups the input
channels of one output tap contiguously, matching the group layout the
pruner operates on. Kernels preserve the input dtype, so a float64 copy
of a network can be used for high-precision gradient checks.

Supported layer kinds: conv2d (stride 1, same padding, odd kernel),
fully_connected, relu, max_pool (window == stride), global_avg_pool,
residual_add, flatten.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

WEIGHTED_KINDS = ("conv2d", "fully_connected")
LAYER_KINDS = WEIGHTED_KINDS + (
    "relu",
    "max_pool",
    "global_avg_pool",
    "residual_add",
    "flatten",
)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the network graph.

    Field use by kind:
      conv2d           out_channels, in_channels, kernel
      fully_connected  out_features, in_features
      max_pool         window, stride (must be equal)
      residual_add     source (index of the layer whose output is added)
      others           no fields
    """

    kind: str
    out_channels: int | None = None
    in_channels: int | None = None
    kernel: int | None = None
    out_features: int | None = None
    in_features: int | None = None
    window: int | None = None
    stride: int | None = None
    source: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d":
            if not (self.out_channels and self.in_channels and self.kernel):
                raise ValueError("conv2d needs out_channels, in_channels, kernel")
            if self.kernel % 2 == 0:
                raise ValueError("conv2d kernel must be odd for same padding")
        if self.kind == "fully_connected" and not (self.out_features and self.in_features):
            raise ValueError("fully_connected needs out_features, in_features")
        if self.kind == "max_pool":
            if not (self.window and self.stride):
                raise ValueError("max_pool needs window and stride")
            if self.window != self.stride:
                raise ValueError("max_pool supports window == stride only")
        if self.kind == "residual_add" and (self.source is None or self.source < 0):
            raise ValueError("residual_add needs a non-negative source layer index")

    @property
    def has_weights(self) -> bool:
        return self.kind in WEIGHTED_KINDS

    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "conv2d":
            return (self.out_channels, self.kernel, self.kernel, self.in_channels)
        if self.kind == "fully_connected":
            return (self.out_features, self.in_features)
        raise ValueError(f"{self.kind} has no weights")


@dataclass
class Network:
    """Layer specs plus parameter arrays, keyed by layer index.

    masks are flat float32 0/1 arrays aligned with weights[i].ravel();
    they record which positions the pruner has cleared. Weights are kept
    multiplied by their mask at all times, the mask exists so gradient
    and momentum updates can be silenced on pruned positions.
    """

    layers: list[LayerSpec]
    input_shape: tuple[int, int, int]
    weights: dict[int, np.ndarray] = field(default_factory=dict)
    biases: dict[int, np.ndarray] = field(default_factory=dict)
    masks: dict[int, np.ndarray] = field(default_factory=dict)

    def weighted_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.layers) if s.has_weights]

    def weight_count(self) -> int:
        return sum(self.weights[i].size for i in self.weighted_indices())


def activation_shapes(net: Network) -> list[tuple[int, ...]]:
    """Per-sample output shape of each layer; validates the graph composes.

    Index k is the output of layer k - 1; index 0 is the input shape.
    """
    shapes: list[tuple[int, ...]] = [tuple(net.input_shape)]
    for i, spec in enumerate(net.layers):
        cur = shapes[-1]
        if spec.kind == "conv2d":
            if len(cur) != 3 or cur[2] != spec.in_channels:
                raise ValueError(
                    f"layer {i}: conv2d expects (H, W, {spec.in_channels}), got {cur}"
                )
            shapes.append((cur[0], cur[1], spec.out_channels))
        elif spec.kind == "fully_connected":
            flat = int(np.prod(cur))
            if flat != spec.in_features:
                raise ValueError(
                    f"layer {i}: fully_connected expects {spec.in_features} features, got {flat}"
                )
            shapes.append((spec.out_features,))
        elif spec.kind == "max_pool":
            if len(cur) != 3 or cur[0] % spec.window or cur[1] % spec.window:
                raise ValueError(f"layer {i}: max_pool window must divide {cur}")
            shapes.append((cur[0] // spec.window, cur[1] // spec.window, cur[2]))
        elif spec.kind == "global_avg_pool":
            if len(cur) != 3:
                raise ValueError(f"layer {i}: global_avg_pool expects spatial input")
            shapes.append((1, 1, cur[2]))
        elif spec.kind == "flatten":
            shapes.append((int(np.prod(cur)),))
        elif spec.kind == "residual_add":
            if spec.source >= i:
                raise ValueError(f"layer {i}: residual source {spec.source} not earlier")
            if shapes[spec.source + 1] != cur:
                raise ValueError(
                    f"layer {i}: residual shapes differ {shapes[spec.source + 1]} vs {cur}"
                )
            shapes.append(cur)
        elif spec.kind == "relu":
            shapes.append(cur)
    return shapes


def build_toy_net(
    input_shape: tuple[int, int, int] = (32, 32, 3),
    channels: tuple[int, ...] = (16, 32, 96),
    num_classes: int = 10,
    seed: int = 0,
) -> Network:
    """Small conv net: [conv-relu-pool]*(k-1), conv-relu-gap, flatten, fc.

    He-normal weight init, zero biases. Defaults give 33 648 weights.
    """
    rng = np.random.default_rng(seed)
    specs: list[LayerSpec] = []
    in_c = input_shape[2]
    for j, out_c in enumerate(channels):
        specs.append(LayerSpec("conv2d", out_channels=out_c, in_channels=in_c, kernel=3))
        specs.append(LayerSpec("relu"))
        if j < len(channels) - 1:
            specs.append(LayerSpec("max_pool", window=2, stride=2))
        else:
            specs.append(LayerSpec("global_avg_pool"))
        in_c = out_c
    specs.append(LayerSpec("flatten"))
    specs.append(LayerSpec("fully_connected", out_features=num_classes, in_features=in_c))

    net = Network(layers=specs, input_shape=input_shape)
    for i, spec in enumerate(specs):
        if not spec.has_weights:
            continue
        shape = spec.weight_shape()
        fan_in = int(np.prod(shape[1:]))
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(np.float32)
        net.weights[i] = w
        net.biases[i] = np.zeros(shape[0], dtype=np.float32)
        net.masks[i] = np.ones(w.size, dtype=np.float32)
    activation_shapes(net)
    return net


def _conv_cols(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """im2col with same padding: (N*H*W, kh*kw*Cin), taps ordered (kh, kw, Cin)."""
    n, h, w, cin = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (N, H, W, Cin, kh, kw)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, kh * kw * cin)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, h, wid, _ = x.shape
    cout, kh, kw, _ = w.shape
    cols = _conv_cols(x, kh, kw)
    out = cols @ w.reshape(cout, -1).T + b
    return out.reshape(n, h, wid, cout)


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, dout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, h, wid, cin = x.shape
    cout, kh, kw, _ = w.shape
    cols = _conv_cols(x, kh, kw)
    dflat = dout.reshape(-1, cout)
    dw = (dflat.T @ cols).reshape(w.shape)
    db = dflat.sum(axis=0)
    dcols = (dflat @ w.reshape(cout, -1)).reshape(n, h, wid, kh, kw, cin)
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    dxp = np.zeros((n, h + 2 * ph, wid + 2 * pw, cin), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + h, j : j + wid, :] += dcols[:, :, :, i, j, :]
    return dxp[:, ph : ph + h, pw : pw + wid, :], dw, db


def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1) @ w.T + b


def fc_backward(
    x: np.ndarray, w: np.ndarray, dout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xf = x.reshape(x.shape[0], -1)
    dw = dout.T @ xf
    db = dout.sum(axis=0)
    dx = (dout @ w).reshape(x.shape)
    return dx, dw, db


def max_pool_forward(x: np.ndarray, window: int) -> np.ndarray:
    n, h, w, c = x.shape
    h2, w2 = h // window, w // window
    return x.reshape(n, h2, window, w2, window, c).max(axis=(2, 4))


def max_pool_backward(x: np.ndarray, dout: np.ndarray, window: int) -> np.ndarray:
    n, h, w, c = x.shape
    h2, w2 = h // window, w // window
    k2 = window * window
    xr = (
        x.reshape(n, h2, window, w2, window, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, h2, w2, c, k2)
    )
    # first-max wins on ties, keeping the scatter deterministic
    onehot = xr.argmax(axis=-1)[..., None] == np.arange(k2)
    dxr = onehot * dout[..., None]
    return (
        dxr.reshape(n, h2, w2, c, window, window)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, h, w, c)
    )


def global_avg_pool_forward(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(1, 2), keepdims=True)


def global_avg_pool_backward(x: np.ndarray, dout: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    return np.broadcast_to(dout / (h * w), x.shape).astype(x.dtype, copy=True)


def forward(net: Network, x: np.ndarray) -> list[np.ndarray]:
    """Run the graph; returns activations with acts[0] = x, acts[i + 1] = layer i."""
    acts = [x]
    for i, spec in enumerate(net.layers):
        cur = acts[-1]
        if spec.kind == "conv2d":
            y = conv2d_forward(cur, net.weights[i], net.biases[i])
        elif spec.kind == "fully_connected":
            y = fc_forward(cur, net.weights[i], net.biases[i])
        elif spec.kind == "relu":
            y = np.maximum(cur, 0)
        elif spec.kind == "max_pool":
            y = max_pool_forward(cur, spec.window)
        elif spec.kind == "global_avg_pool":
            y = global_avg_pool_forward(cur)
        elif spec.kind == "flatten":
            y = cur.reshape(cur.shape[0], -1)
        elif spec.kind == "residual_add":
            y = cur + acts[spec.source + 1]
        acts.append(y)
    return acts


def backward(
    net: Network, acts: list[np.ndarray], dlogits: np.ndarray
) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray]]:
    """Gradients of the loss wrt weights and biases, given d(loss)/d(logits)."""
    gacts: list[np.ndarray | None] = [None] * len(acts)
    gacts[-1] = dlogits
    gw: dict[int, np.ndarray] = {}
    gb: dict[int, np.ndarray] = {}

    def accumulate(k: int, g: np.ndarray) -> None:
        gacts[k] = g if gacts[k] is None else gacts[k] + g

    for i in reversed(range(len(net.layers))):
        spec = net.layers[i]
        g = gacts[i + 1]
        if g is None:
            continue
        x = acts[i]
        if spec.kind == "conv2d":
            dx, dw, db = conv2d_backward(x, net.weights[i], g)
            gw[i], gb[i] = dw, db
        elif spec.kind == "fully_connected":
            dx, dw, db = fc_backward(x, net.weights[i], g)
            gw[i], gb[i] = dw, db
        elif spec.kind == "relu":
            dx = g * (x > 0)
        elif spec.kind == "max_pool":
            dx = max_pool_backward(x, g, spec.window)
        elif spec.kind == "global_avg_pool":
            dx = global_avg_pool_backward(x, g)
        elif spec.kind == "flatten":
            dx = g.reshape(x.shape)
        elif spec.kind == "residual_add":
            accumulate(spec.source + 1, g)
            dx = g
        accumulate(i, dx)
    return gw, gb


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient wrt the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(n), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, (dlogits / n).astype(logits.dtype)
