"""SVR graph construction: spectral neurons, adjacency matrices, thresholding."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dims import color_intensity
from .linalg import SvdFactors, flatten_conv, flatten_conv_co, svd
from .stats import NullModel
from .tensorio import LayerSpec, ModelSpec, WeightStore, validate_store

SPATIAL_BOUNDARY = "conv->fc: fc input split as (channel, spatial position); positions paired like kernel cells"


@dataclass(frozen=True)
class SpectralNeuron:
    layer: int
    rank: int
    sigma: float
    in_rep: np.ndarray
    out_rep: np.ndarray
    color: float = 0.0


@dataclass(frozen=True)
class AdjacencyMatrix:
    """Rows index the next layer's spectral neurons, columns the previous layer's."""

    values: np.ndarray
    kind: str
    n_null: int
    k_null: int = 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def null_model(self) -> NullModel:
        if self.kind == "cross":
            raise ValueError("no null model is defined for cross adjacency")
        return NullModel(dof=self.k_null, scale=1.0 / (self.n_null * self.k_null), n=self.n_null)


@dataclass(frozen=True)
class SvrGraph:
    spec: ModelSpec
    factors: tuple[SvdFactors, ...]
    neurons: tuple[tuple[SpectralNeuron, ...], ...]
    adjacencies: tuple[AdjacencyMatrix, ...]
    tie_flags: tuple[bool, ...]
    meta: dict = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.factors)

    def sigmas(self, layer: int) -> np.ndarray:
        return self.factors[layer].S

    def colors(self, layer: int) -> np.ndarray:
        return np.array([n.color for n in self.neurons[layer]])


def layer_matrix(layer: LayerSpec, weight) -> np.ndarray:
    """2-D view of a layer's weights: fc as is, conv flattened to o x (i K^2)."""
    w = np.asarray(weight, dtype=np.float64)
    return flatten_conv(w) if layer.kind == "conv" else w


def _next_input_cells(layer: LayerSpec, V: np.ndarray) -> np.ndarray:
    # right singular vectors of the next layer as (shared channel, cell, neuron)
    channels = layer.channels_in
    return V.reshape(channels, -1, V.shape[1])


def fc_adjacency(U_prev, V_next) -> np.ndarray:
    """Squared overlaps ``(V_next^T U_prev)**2``, shape (M', M)."""
    U_prev, V_next = np.asarray(U_prev), np.asarray(V_next)
    if U_prev.shape[0] != V_next.shape[0]:
        raise ValueError(f"shared dimension mismatch: {U_prev.shape[0]} vs {V_next.shape[0]}")
    return (V_next.T @ U_prev) ** 2


def effective_filters(U_prev, V_next) -> np.ndarray:
    """Filters ``A[n, m] = sum_k U_prev[k, m] * V_next[k, :, :, n]``, shape (M', M, K, K)."""
    U_prev, V_next = np.asarray(U_prev), np.asarray(V_next)
    if V_next.ndim != 4 or U_prev.shape[0] != V_next.shape[0]:
        raise ValueError("expected U_prev (o, M) and V_next (o, K, K, M') with matching o")
    return np.einsum("km,kabn->nmab", U_prev, V_next, optimize=True)


def _cell_adjacency(U_prev, V_cells) -> np.ndarray:
    if U_prev.shape[0] != V_cells.shape[0]:
        raise ValueError(f"shared dimension mismatch: {U_prev.shape[0]} vs {V_cells.shape[0]}")
    prod = np.einsum("km,kzn->nmz", U_prev, V_cells, optimize=True)
    return np.einsum("nmz,nmz->nm", prod, prod)


def conv_adjacency(U_prev, V_next) -> np.ndarray:
    """Squared Frobenius norms of the effective filters, ``||U_m^T V_n||_F^2``."""
    U_prev, V_next = np.asarray(U_prev), np.asarray(V_next)
    if V_next.ndim != 4:
        raise ValueError("V_next must be an o x K x K x M' tensor")
    o, K, _, M2 = V_next.shape
    return _cell_adjacency(U_prev, V_next.reshape(o, K * K, M2))


def co_svr(T) -> SvdFactors:
    """SVD of the (o K^2) x i flattening of a conv tensor."""
    return svd(flatten_conv_co(T))


def cross_adjacency(U_bar_prev, V_tilde_next, squared: bool = False) -> np.ndarray:
    """``|V_tilde_next^T U_bar_prev|`` (or its square), shape (r', M)."""
    U_bar_prev, V_tilde_next = np.asarray(U_bar_prev), np.asarray(V_tilde_next)
    if U_bar_prev.shape[0] != V_tilde_next.shape[0]:
        raise ValueError(f"shared channel mismatch: {U_bar_prev.shape[0]} vs {V_tilde_next.shape[0]}")
    m = np.abs(V_tilde_next.T @ U_bar_prev)
    return m * m if squared else m


def pair_adjacency(prev: LayerSpec, nxt: LayerSpec, f_prev: SvdFactors, f_next: SvdFactors) -> AdjacencyMatrix:
    """Adjacency between consecutive layers, picking the fc or conv rule by ``nxt``."""
    shared = prev.out_dim
    if nxt.kind == "conv":
        K = nxt.kernel
        V = f_next.V.reshape(shared, K, K, -1)
        return AdjacencyMatrix(conv_adjacency(f_prev.U, V), "conv", shared, K * K)
    if nxt.spatial:
        values = _cell_adjacency(f_prev.U, _next_input_cells(nxt, f_next.V))
        return AdjacencyMatrix(values, "conv", shared, nxt.spatial)
    return AdjacencyMatrix(fc_adjacency(f_prev.U, f_next.V), "fc", shared, 1)


def _infer_layer(name: str, w: np.ndarray) -> LayerSpec:
    if w.ndim == 4:
        return LayerSpec(name, "conv", w.shape[1], w.shape[0], kernel=w.shape[2])
    if w.ndim == 2:
        return LayerSpec(name, "fc", w.shape[1], w.shape[0])
    raise ValueError(f"cannot infer a layer from a {w.ndim}-D tensor")


def spec_from_weights(weights, activation: str = "relu", head: str = "argmax") -> ModelSpec:
    """Manifest inferred from a list of fc (2-D) / conv (4-D) weight tensors."""
    layers = []
    for i, w in enumerate(weights):
        layer = _infer_layer(f"layer{i}", np.asarray(w))
        if layers and layers[-1].kind == "conv" and layer.kind == "fc":
            prev = layers[-1]
            layer = LayerSpec(layer.name, "fc", layer.in_dim, layer.out_dim, spatial=layer.in_dim // prev.out_dim)
        layers.append(layer)
    return ModelSpec(tuple(layers), activation, head)


def adjacency_between(w0, w1) -> AdjacencyMatrix:
    """Adjacency of two raw consecutive weight tensors."""
    w0, w1 = np.asarray(w0, dtype=np.float64), np.asarray(w1, dtype=np.float64)
    spec = spec_from_weights([w0, w1])
    f0, f1 = (svd(layer_matrix(layer, w)) for layer, w in zip(spec.layers, (w0, w1)))
    return pair_adjacency(spec.layers[0], spec.layers[1], f0, f1)


def layer_factors(spec: ModelSpec, store: WeightStore, threads: int = 1) -> list[SvdFactors]:
    mats = [layer_matrix(layer, store[layer.name]) for layer in spec.layers]
    if threads > 1 and len(mats) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(svd, mats))
    return [svd(m) for m in mats]


def build_svr(spec: ModelSpec, store: WeightStore, threads: int = 1) -> SvrGraph:
    """Factor every layer and connect consecutive layers' spectral neurons.

    Pooling is ignored: it does not touch the parameter space.
    """
    validate_store(spec, store)
    factors = layer_factors(spec, store, threads)
    adjacencies = tuple(
        pair_adjacency(spec.layers[i], spec.layers[i + 1], factors[i], factors[i + 1])
        for i in range(len(factors) - 1)
    )
    neurons = []
    for i, f in enumerate(factors):
        if i < len(adjacencies):
            adj = adjacencies[i]
            colors = color_intensity(adj.values, adj.n_null)
        else:
            colors = np.zeros(f.rank)
        neurons.append(
            tuple(
                SpectralNeuron(i, k, float(f.S[k]), f.V[:, k], f.U[:, k], float(colors[k]))
                for k in range(f.rank)
            )
        )
    meta = {}
    boundaries = {
        i: SPATIAL_BOUNDARY
        for i in range(len(adjacencies))
        if spec.layers[i + 1].kind == "fc" and spec.layers[i + 1].spatial
    }
    if boundaries:
        meta["boundaries"] = boundaries
    tie_flags = tuple(f.has_ties() for f in factors)
    return SvrGraph(spec, tuple(factors), tuple(neurons), adjacencies, tie_flags, meta)


def threshold_edges(adj: AdjacencyMatrix, p: float) -> list[tuple[int, int, float]]:
    """Entries strictly above the null quantile exceeded with probability ``p``."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    t = adj.null_model.threshold(p)
    rows, cols = np.nonzero(adj.values > t)
    return [(int(r), int(c), float(adj.values[r, c])) for r, c in zip(rows, cols)]


def cross_adjacency_at(spec: ModelSpec, store: WeightStore, layer: int, squared: bool = False):
    """Cross adjacency between layer ``layer`` (SVR) and ``layer + 1`` (co-SVR).

    Returns ``(matrix, svr_factors_prev, co_factors_next)``.
    """
    if not 0 <= layer < len(spec) - 1:
        raise IndexError(f"layer index {layer} has no successor")
    prev, nxt = spec.layers[layer], spec.layers[layer + 1]
    if nxt.kind == "fc" and nxt.spatial:
        raise ValueError("cross adjacency is undefined across a conv->fc flattening")
    f_prev = svd(layer_matrix(prev, store[prev.name]))
    # an fc layer is a 1x1 conv, whose co-flattening is the weight matrix itself
    f_next = co_svr(store[nxt.name]) if nxt.kind == "conv" else svd(store[nxt.name])
    return cross_adjacency(f_prev.U, f_next.V, squared), f_prev, f_next
