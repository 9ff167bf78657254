"""Small MobileNet-style classifier in plain numpy, float64 throughout.

Tensors are ``(N, C, H, W)`` batches; a single ``(C, H, W)`` sample is
accepted wherever a batch is.  Convolutions use zero "same" padding of
``K // 2`` and carry no bias; the dense head does.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAGIC = b"LFNET1"

KINDS = ("standard_conv", "depthwise_separable", "relu", "global_avg_pool", "dense", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    args: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        expected = {"standard_conv": 4, "depthwise_separable": 4, "dense": 2}.get(self.kind, 0)
        if len(self.args) != expected:
            raise ValueError(f"{self.kind} takes {expected} integer args, got {self.args}")


def standard_conv(c_in: int, c_out: int, k: int, stride: int = 1) -> LayerSpec:
    return LayerSpec("standard_conv", (c_in, c_out, k, stride))


def depthwise_separable(c_in: int, c_out: int, k: int, stride: int = 1) -> LayerSpec:
    return LayerSpec("depthwise_separable", (c_in, c_out, k, stride))


def dense(f_in: int, f_out: int) -> LayerSpec:
    return LayerSpec("dense", (f_in, f_out))


RELU = LayerSpec("relu")
GAP = LayerSpec("global_avg_pool")
SOFTMAX = LayerSpec("softmax")


@dataclass(frozen=True)
class NetSpec:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int] = (3, 16, 16)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        self.output_shapes()  # validates the chain

    def output_shapes(self) -> list[tuple[int, ...]]:
        """Shape after each layer; raises on the first layer that does not chain."""
        shape: tuple[int, ...] = tuple(self.input_shape)
        shapes = []
        seen_conv = False
        for i, layer in enumerate(self.layers):
            kind, args = layer.kind, layer.args
            if kind in ("standard_conv", "depthwise_separable"):
                if not seen_conv and kind != "standard_conv":
                    raise ValueError(f"layer {i}: first convolution must be standard_conv")
                seen_conv = True
                c_in, c_out, k, s = args
                if len(shape) != 3 or shape[0] != c_in:
                    raise ValueError(f"layer {i}: {kind} expects {c_in} channels, got shape {shape}")
                shape = (c_out, _out_size(shape[1], k, s), _out_size(shape[2], k, s))
            elif kind == "global_avg_pool":
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: pooling needs a feature map, got {shape}")
                shape = (shape[0],)
            elif kind == "dense":
                if shape != (args[0],):
                    raise ValueError(f"layer {i}: dense expects ({args[0]},), got {shape}")
                shape = (args[1],)
            elif kind == "softmax":
                if len(shape) != 1:
                    raise ValueError(f"layer {i}: softmax needs a vector, got {shape}")
            shapes.append(shape)
        return shapes

    @property
    def num_classes(self) -> int:
        return self.output_shapes()[-1][0]


def default_spec(num_classes: int = 3, input_hw: int = 16) -> NetSpec:
    return NetSpec(
        (
            standard_conv(3, 8, 3, 1),
            RELU,
            depthwise_separable(8, 16, 3, 2),
            RELU,
            depthwise_separable(16, 32, 3, 2),
            RELU,
            GAP,
            dense(32, num_classes),
            SOFTMAX,
        ),
        (3, input_hw, input_hw),
    )


def all_standard_spec(spec: NetSpec) -> NetSpec:
    """Same channel plan with every separable block replaced by a full convolution."""
    layers = [
        standard_conv(*l.args) if l.kind == "depthwise_separable" else l for l in spec.layers
    ]
    return NetSpec(tuple(layers), spec.input_shape)


def _out_size(n: int, k: int, s: int) -> int:
    p = k // 2
    return (n + 2 * p - k) // s + 1


def _param_shapes(layer: LayerSpec) -> list[tuple[int, ...]]:
    if layer.kind == "standard_conv":
        c_in, c_out, k, _ = layer.args
        return [(c_out, c_in, k, k)]
    if layer.kind == "depthwise_separable":
        c_in, c_out, k, _ = layer.args
        return [(c_in, k, k), (c_out, c_in)]
    if layer.kind == "dense":
        f_in, f_out = layer.args
        return [(f_out, f_in), (f_out,)]
    return []


def _fans(layer: LayerSpec, index: int) -> tuple[int, int]:
    if layer.kind == "standard_conv":
        c_in, c_out, k, _ = layer.args
        return c_in * k * k, c_out * k * k
    if layer.kind == "depthwise_separable":
        c_in, c_out, k, _ = layer.args
        return (k * k, k * k) if index == 0 else (c_in, c_out)
    f_in, f_out = layer.args
    return f_in, f_out


@dataclass
class Net:
    spec: NetSpec
    params: list[list[np.ndarray]] = field(default_factory=list)

    @classmethod
    def init(cls, spec: NetSpec, seed: int = 42) -> "Net":
        """Glorot-uniform weights from a seeded generator; biases start at zero."""
        rng = np.random.default_rng(seed)
        params = []
        for layer in spec.layers:
            arrays = []
            for i, shape in enumerate(_param_shapes(layer)):
                if layer.kind == "dense" and i == 1:
                    arrays.append(np.zeros(shape))
                    continue
                fan_in, fan_out = _fans(layer, i)
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                arrays.append(rng.uniform(-bound, bound, size=shape))
            params.append(arrays)
        return cls(spec, params)

    @classmethod
    def zeros(cls, spec: NetSpec) -> "Net":
        return cls(spec, [[np.zeros(s) for s in _param_shapes(l)] for l in spec.layers])

    def copy(self) -> "Net":
        return Net(self.spec, [[a.copy() for a in arrays] for arrays in self.params])

    def flat_params(self) -> np.ndarray:
        arrays = [a.ravel() for layer in self.params for a in layer]
        return np.concatenate(arrays) if arrays else np.zeros(0)


# -- primitive ops ----------------------------------------------------------------


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected (C, H, W) or (N, C, H, W), got shape {x.shape}")
    return x, False


def _windows(xp: np.ndarray, k: int, s: int, ho: int, wo: int):
    for u in range(k):
        for v in range(k):
            yield u, v, xp[:, :, u : u + s * (ho - 1) + 1 : s, v : v + s * (wo - 1) + 1 : s]


def conv2d(x: np.ndarray, weights: np.ndarray, stride: int = 1, bias: np.ndarray | None = None) -> np.ndarray:
    """Cross-correlation ``out[o,i,j] = sum w[o,c,u,v] x[c, i*s+u-K//2, j*s+v-K//2] + b[o]``."""
    xb, single = _as_batch(x)
    c_out, c_in, k, k2 = weights.shape
    if k != k2 or xb.shape[1] != c_in:
        raise ValueError(f"weights {weights.shape} do not fit input {xb.shape}")
    p = k // 2
    ho, wo = _out_size(xb.shape[2], k, stride), _out_size(xb.shape[3], k, stride)
    xp = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((xb.shape[0], c_out, ho, wo))
    for u, v, win in _windows(xp, k, stride, ho, wo):
        out += np.einsum("oc,nchw->nohw", weights[:, :, u, v], win)
    if bias is not None:
        out += bias[None, :, None, None]
    return out[0] if single else out


def _conv2d_backward(x, weights, stride, dout):
    c_out, c_in, k, _ = weights.shape
    p = k // 2
    ho, wo = dout.shape[2], dout.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(weights)
    for u, v, win in _windows(xp, k, stride, ho, wo):
        dw[:, :, u, v] = np.einsum("nohw,nchw->oc", dout, win)
        dxp[:, :, u : u + stride * (ho - 1) + 1 : stride, v : v + stride * (wo - 1) + 1 : stride] += np.einsum(
            "oc,nohw->nchw", weights[:, :, u, v], dout
        )
    return dxp[:, :, p : p + x.shape[2], p : p + x.shape[3]], dw


def depthwise_conv(x: np.ndarray, dw_weights: np.ndarray, stride: int = 1) -> np.ndarray:
    """Each channel filtered by its own ``K x K`` kernel."""
    xb, single = _as_batch(x)
    c, k, _ = dw_weights.shape
    if xb.shape[1] != c:
        raise ValueError(f"depthwise weights {dw_weights.shape} do not fit input {xb.shape}")
    p = k // 2
    ho, wo = _out_size(xb.shape[2], k, stride), _out_size(xb.shape[3], k, stride)
    xp = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((xb.shape[0], c, ho, wo))
    for u, v, win in _windows(xp, k, stride, ho, wo):
        out += dw_weights[None, :, u, v, None, None] * win
    return out[0] if single else out


def _depthwise_backward(x, dw_weights, stride, dout):
    c, k, _ = dw_weights.shape
    p = k // 2
    ho, wo = dout.shape[2], dout.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(dw_weights)
    for u, v, win in _windows(xp, k, stride, ho, wo):
        dw[:, u, v] = np.einsum("nchw,nchw->c", dout, win)
        dxp[:, :, u : u + stride * (ho - 1) + 1 : stride, v : v + stride * (wo - 1) + 1 : stride] += (
            dw_weights[None, :, u, v, None, None] * dout
        )
    return dxp[:, :, p : p + x.shape[2], p : p + x.shape[3]], dw


def pointwise_conv(x: np.ndarray, pw_weights: np.ndarray) -> np.ndarray:
    xb, single = _as_batch(x)
    if pw_weights.ndim == 4:
        pw_weights = pw_weights[:, :, 0, 0]
    out = np.einsum("oc,nchw->nohw", pw_weights, xb)
    return out[0] if single else out


def depthwise_separable_conv(x: np.ndarray, dw_weights: np.ndarray, pw_weights: np.ndarray, stride: int = 1) -> np.ndarray:
    """Depthwise ``K x K`` filtering followed by a ``1 x 1`` channel mix."""
    return pointwise_conv(depthwise_conv(x, dw_weights, stride), pw_weights)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- network passes -------------------------------------------------------------------


def _forward_cached(net: Net, x: np.ndarray, upto: int | None = None):
    layers = net.spec.layers if upto is None else net.spec.layers[:upto]
    cache = []
    h = x
    for layer, params in zip(layers, net.params):
        kind, args = layer.kind, layer.args
        cache.append(h)
        if kind == "standard_conv":
            h = conv2d(h, params[0], args[3])
        elif kind == "depthwise_separable":
            mid = depthwise_conv(h, params[0], args[3])
            cache[-1] = (h, mid)
            h = pointwise_conv(mid, params[1])
        elif kind == "relu":
            h = np.maximum(h, 0.0)
        elif kind == "global_avg_pool":
            h = h.mean(axis=(2, 3))
        elif kind == "dense":
            h = h @ params[0].T + params[1]
        elif kind == "softmax":
            h = softmax(h)
    return h, cache


def _check_input(net: Net, x: np.ndarray, any_size: bool = False) -> tuple[np.ndarray, bool]:
    xb, single = _as_batch(x)
    c, hh, ww = net.spec.input_shape
    if any_size:
        ok = xb.shape[1] == c
    else:
        ok = xb.shape[1:] == (c, hh, ww)
    if not ok:
        raise ValueError(f"input shape {xb.shape[1:]} does not match network input {net.spec.input_shape}")
    return xb, single


def forward(net: Net, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one sample ``(C, H, W)`` or a batch."""
    xb, single = _check_input(net, x)
    out, _ = _forward_cached(net, xb)
    return out[0] if single else out


def features(net: Net, x: np.ndarray) -> np.ndarray:
    """Pooled feature vector(s): activations right after global average pooling.

    The convolutional trunk accepts any spatial size.
    """
    kinds = [l.kind for l in net.spec.layers]
    if "global_avg_pool" not in kinds:
        raise ValueError("network has no pooling layer")
    xb, single = _check_input(net, x, any_size=True)
    out, _ = _forward_cached(net, xb, upto=kinds.index("global_avg_pool") + 1)
    return out[0] if single else out


def loss_and_gradients(net: Net, batch: np.ndarray, labels: Sequence[int]) -> tuple[float, list[list[np.ndarray]]]:
    """Mean cross-entropy and its exact gradient for every parameter.

    The trailing softmax is folded into the loss, so its backward pass is
    ``(p - onehot) / N`` on the logits.
    """
    xb, _ = _check_input(net, batch)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = net.spec.num_classes
    if labels.shape != (xb.shape[0],) or labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("labels must be one class index per sample, within range")
    if net.spec.layers[-1].kind != "softmax":
        raise ValueError("training requires a softmax head")
    probs, cache = _forward_cached(net, xb)
    n = xb.shape[0]
    logits = cache[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-np.mean(log_probs[np.arange(n), labels]))

    grads: list[list[np.ndarray]] = [[] for _ in net.spec.layers]
    g = probs.copy()
    g[np.arange(n), labels] -= 1.0
    g /= n
    # softmax is the last layer; walk the rest backwards
    for i in range(len(net.spec.layers) - 2, -1, -1):
        layer, params, inp = net.spec.layers[i], net.params[i], cache[i]
        kind, args = layer.kind, layer.args
        if kind == "dense":
            grads[i] = [g.T @ inp, g.sum(axis=0)]
            g = g @ params[0]
        elif kind == "global_avg_pool":
            hh, ww = inp.shape[2], inp.shape[3]
            g = np.broadcast_to(g[:, :, None, None] / (hh * ww), inp.shape).copy()
        elif kind == "relu":
            g = g * (inp > 0)
        elif kind == "standard_conv":
            g, dw = _conv2d_backward(inp, params[0], args[3], g)
            grads[i] = [dw]
        elif kind == "depthwise_separable":
            x_in, mid = inp
            d_pw = np.einsum("nohw,nchw->oc", g, mid)
            g_mid = np.einsum("oc,nohw->nchw", params[1], g)
            g, d_dw = _depthwise_backward(x_in, params[0], args[3], g_mid)
            grads[i] = [d_dw, d_pw]
        elif kind == "softmax":
            raise ValueError("softmax is only supported as the final layer")
    return loss, grads


def backward_and_step(net: Net, batch: np.ndarray, labels: Sequence[int], lr: float) -> float:
    """One plain SGD step on the mean cross-entropy; returns the pre-step loss."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    loss, grads = loss_and_gradients(net, batch, labels)
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}; step aborted")
    if lr > 0:
        for params, layer_grads in zip(net.params, grads):
            for p, g in zip(params, layer_grads):
                p -= lr * g
    return loss


def param_count(net: Net | NetSpec) -> int:
    spec = net.spec if isinstance(net, Net) else net
    return sum(int(np.prod(s)) for layer in spec.layers for s in _param_shapes(layer))


# -- checkpoint -------------------------------------------------------------------------


def encode_net(net: Net) -> bytes:
    out = [MAGIC, struct.pack("<4I", *net.spec.input_shape, len(net.spec.layers))]
    for layer in net.spec.layers:
        payload = struct.pack(f"<BB{len(layer.args)}I", KINDS.index(layer.kind), len(layer.args), *layer.args)
        out.append(struct.pack("<I", len(payload)) + payload)
    out.append(net.flat_params().astype("<f8").tobytes())
    return b"".join(out)


def decode_net(data: bytes) -> Net:
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"not an LFNET1 checkpoint (magic {data[:len(MAGIC)]!r})")
    pos = len(MAGIC)
    c, h, w, n_layers = struct.unpack_from("<4I", data, pos)
    pos += 16
    layers = []
    for _ in range(n_layers):
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        kind, n_args = struct.unpack_from("<BB", data, pos)
        if 2 + 4 * n_args != length:
            raise ValueError("corrupt layer record")
        args = struct.unpack_from(f"<{n_args}I", data, pos + 2)
        layers.append(LayerSpec(KINDS[kind], tuple(args)))
        pos += length
    spec = NetSpec(tuple(layers), (c, h, w))
    flat = np.frombuffer(data, dtype="<f8", offset=pos)
    if flat.size != param_count(spec):
        raise ValueError(f"checkpoint holds {flat.size} parameters, spec needs {param_count(spec)}")
    net = Net.zeros(spec)
    i = 0
    for arrays in net.params:
        for a in arrays:
            a[...] = flat[i : i + a.size].reshape(a.shape)
            i += a.size
    return net


def save_net(net: Net, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_net(net))


def load_net(path) -> Net:
    with open(path, "rb") as fh:
        return decode_net(fh.read())
