"""Forward passes, spectral activations and spectral images.

Shapes: fc activations are ``(features,)`` or ``(batch, features)``; conv
activations are ``(channels, H, W)`` or ``(batch, channels, H, W)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import conv2d, conv2d_layer, svd
from .spectra import layer_matrix
from .tensorio import LayerSpec, ModelSpec, Pooling, WeightStore

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = np.array([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]])


def activate(x, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(x, 0.0)
    if activation == "identity":
        return np.asarray(x)
    raise ValueError(f"unknown activation {activation!r}")


def pool2d(x, pooling: Pooling) -> np.ndarray:
    """Non-overlapping pooling over the last two axes (trailing rows/cols dropped)."""
    w = pooling.window
    H, W = x.shape[-2] // w, x.shape[-1] // w
    x = x[..., : H * w, : W * w]
    blocks = x.reshape(x.shape[:-2] + (H, w, W, w))
    if pooling.kind == "max":
        return blocks.max(axis=(-3, -1))
    return blocks.mean(axis=(-3, -1))


def apply_layer(layer: LayerSpec, weight, h) -> np.ndarray:
    """Linear map of one layer on a (possibly batched) input."""
    if layer.kind == "conv":
        return conv2d_layer(h, weight)
    if h.ndim >= 3 or (h.ndim == 2 and h.shape[-1] != layer.in_dim):
        # conv feature maps (or images) feeding an fc layer: flatten (channel, H, W)
        batched = h.ndim == 4 or (h.ndim == 3 and layer.spatial is None and h[0].size == layer.in_dim)
        h = h.reshape(h.shape[0], -1) if batched else h.reshape(-1)
    if h.shape[-1] != layer.in_dim:
        raise ValueError(f"layer {layer.name!r} expects {layer.in_dim} inputs, got {h.shape[-1]}")
    return h @ np.asarray(weight).T


@dataclass
class ActivationTrace:
    """``X[i]`` is the input of layer ``i`` (``X[0]`` raw); ``Y[i]`` its spectral activations."""

    X: list
    Y: list

    @property
    def output(self) -> np.ndarray:
        return self.X[-1]


def _layer_input(spec: ModelSpec, i: int, x_i):
    # input actually fed to layer i: psi (except on raw input) then the previous layer's pooling
    if i == 0:
        return x_i
    h = activate(x_i, spec.activation)
    prev = spec.layers[i - 1]
    if prev.pooling_after is not None:
        h = pool2d(h, prev.pooling_after)
    return h


def forward(spec: ModelSpec, store: WeightStore, x, factors=None) -> ActivationTrace:
    """Run the network and record post-linear activations and spectral activations.

    ``X[i + 1] = A_i(h_i)`` with ``h_0 = X[0]`` and ``h_i = pool(psi(X[i]))``;
    ``Y[i] = V_i^T psi(pool(X[i]))`` (images for conv layers).
    """
    x = np.asarray(x, dtype=np.float64)
    if factors is None:
        factors = [svd(layer_matrix(layer, store[layer.name])) for layer in spec.layers]
    X, Y = [x], []
    for i, layer in enumerate(spec.layers):
        h = _layer_input(spec, i, X[i])
        y_in = h if i > 0 else activate(h, spec.activation)
        Y.append(_project(layer, factors[i], y_in))
        X.append(apply_layer(layer, store[layer.name], h))
    return ActivationTrace(X, Y)


def _project(layer: LayerSpec, f, h) -> np.ndarray:
    if layer.kind == "conv":
        V = f.V.T.reshape(f.rank, layer.in_dim, layer.kernel, layer.kernel)
        return conv2d_layer(h, V)
    if h.ndim >= 3 or (h.ndim == 2 and h.shape[-1] != layer.in_dim):
        batched = h.ndim == 4 or (h.ndim == 3 and h[0].size == layer.in_dim)
        h = h.reshape(h.shape[0], -1) if batched else h.reshape(-1)
    return h @ f.V


def predict(spec: ModelSpec, store: WeightStore, x) -> np.ndarray:
    """Logits of a batch (or single input) without spectral bookkeeping."""
    h = np.asarray(x, dtype=np.float64)
    for i, layer in enumerate(spec.layers):
        if i > 0:
            h = activate(h, spec.activation)
            prev = spec.layers[i - 1]
            if prev.pooling_after is not None:
                h = pool2d(h, prev.pooling_after)
        h = apply_layer(layer, store[layer.name], h)
    return h


def classify(spec: ModelSpec, store: WeightStore, x) -> np.ndarray:
    logits = predict(spec, store, x)
    if spec.head == "none":
        return logits
    return np.argmax(logits, axis=-1)


def spectral_activations(spec: ModelSpec, store: WeightStore, x, factors=None) -> list:
    return forward(spec, store, x, factors).Y


def spectral_images(spec: ModelSpec, store: WeightStore, image, layer: int, top_k: int | None = None, factors=None):
    """Single-channel spectral images of a conv layer, ordered by decreasing singular value."""
    if spec.layers[layer].kind != "conv":
        raise ValueError(f"layer {layer} is not a convolutional layer")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError("spectral_images expects a single (channels, H, W) input")
    Y = spectral_activations(spec, store, image, factors)[layer]
    return Y if top_k is None else Y[:top_k]


def sobel(image) -> np.ndarray:
    """Edge magnitude ``sqrt((Gx * X)^2 + (Gy * X)^2)`` with zero padding."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("sobel expects a 2-D image")
    gx = conv2d(image, SOBEL_X)
    gy = conv2d(image, SOBEL_Y)
    return np.sqrt(gx * gx + gy * gy)


def downsample(image, factor: int) -> np.ndarray:
    """Greyscale (channel mean) then ``factor x factor`` average pooling.

    Accepts (H, W), (C, H, W) or (H, W, 3).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        channel_axis = -1 if image.shape[-1] in (3, 4) and image.shape[0] not in (1, 3, 4) else 0
        image = image.mean(axis=channel_axis)
    if image.ndim != 2:
        raise ValueError("downsample expects a 2-D or 3-D image")
    H, W = image.shape
    if factor < 1 or H % factor or W % factor:
        raise ValueError(f"factor {factor} does not divide image size {H}x{W}")
    return image.reshape(H // factor, factor, W // factor, factor).mean(axis=(1, 3))


def cosine_similarity(a, b) -> float:
    """Cosine of two flattened arrays; 0 when either is the zero vector."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class EdgeSimilarity:
    mean: np.ndarray
    std: np.ndarray
    n: int

    def rows(self):
        return [(k, float(m), float(s), self.n) for k, (m, s) in enumerate(zip(self.mean, self.std))]


def edge_similarity(spec: ModelSpec, store: WeightStore, images, layer: int, top_k: int | None = None) -> EdgeSimilarity:
    """Cosine similarity between |spectral image| and the Sobel map of the downsampled input, per rank."""
    images = list(images)
    if not images:
        raise ValueError("edge_similarity needs at least one image")
    factors = [svd(layer_matrix(lay, store[lay.name])) for lay in spec.layers]
    sims = []
    for img in images:
        img = np.asarray(img, dtype=np.float64)
        Y = spectral_images(spec, store, img, layer, top_k, factors)
        factor = img.shape[-1] // Y.shape[-1]
        edges = sobel(downsample(img, factor))
        sims.append([cosine_similarity(np.abs(y), edges) for y in Y])
    sims = np.asarray(sims)
    return EdgeSimilarity(sims.mean(axis=0), sims.std(axis=0), len(images))
