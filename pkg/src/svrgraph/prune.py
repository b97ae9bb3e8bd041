"""SVD truncation, near-kernel block detection and prunable-neuron identification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dims import internal_dims
from .linalg import SvdFactors, haar_orthogonal, unflatten_conv, unflatten_conv_co
from .spectra import SvrGraph
from .tensorio import LayerSpec, ModelSpec, WeightStore

NEGLIGIBLE_RTOL = 1e-6


def truncate_layer(factors: SvdFactors, keep: int, layer: LayerSpec | None = None) -> np.ndarray:
    """Rank-``keep`` reconstruction ``U_k diag(S_k) V_k^T``, reshaped to the layer's weight shape."""
    if not 1 <= keep <= factors.rank:
        raise ValueError(f"keep must lie in [1, {factors.rank}], got {keep}")
    W = factors.reconstruct(keep)
    if layer is not None and layer.kind == "conv":
        return unflatten_conv(W, layer.in_dim, layer.kernel)
    return W


@dataclass(frozen=True)
class LayerPrune:
    name: str
    kept: int
    dropped: int
    sigma_cutoff: float

    def to_dict(self) -> dict:
        return {"name": self.name, "kept": self.kept, "dropped": self.dropped, "sigma_cutoff": self.sigma_cutoff}


def internal_dim_votes(graph: SvrGraph) -> list[list[int]]:
    """Per layer, the internal dimensions proposed by the adjacencies touching it."""
    votes: list[list[int]] = [[] for _ in range(graph.n_layers)]
    for i, adj in enumerate(graph.adjacencies):
        d = internal_dims(adj.values, adj.n_null)
        votes[i].append(d.d_in)  # layer i supplies U (columns)
        votes[i + 1].append(d.d_out)  # layer i + 1 supplies V (rows)
    return votes


def prune_to_internal_dims(spec: ModelSpec, store: WeightStore, graph: SvrGraph):
    """Truncate every layer to the larger of its internal-dimension votes.

    Layers keep their original dense shape. Returns ``(pruned_store, report)``.
    """
    votes = internal_dim_votes(graph)
    out = store.copy()
    report = []
    for i, layer in enumerate(spec.layers):
        f = graph.factors[i]
        keep = max(votes[i]) if votes[i] else f.rank
        out[layer.name] = truncate_layer(f, keep, layer)
        cutoff = float(f.S[keep - 1]) if keep <= f.rank else 0.0
        report.append(LayerPrune(layer.name, keep, f.rank - keep, cutoff))
    return out, report


# -- near-kernel blocks ---------------------------------------------------------


@dataclass(frozen=True)
class BlockPartition:
    """Contiguous blocks on both axes of a cross adjacency.

    ``boundaries`` are column (previous-layer rank) cut points ``0 = c_0 < ... < c_B = M``,
    ``row_boundaries`` the matching row cut points.
    """

    boundaries: tuple[int, ...]
    row_boundaries: tuple[int, ...]
    within_mass: float
    block_sigmas: tuple[tuple[float, float], ...]
    block_sigmas_next: tuple[tuple[float, float], ...]
    sigma_max: float

    @property
    def n_blocks(self) -> int:
        return len(self.boundaries) - 1

    def column_block(self) -> np.ndarray:
        """Block index of every column."""
        idx = np.empty(self.boundaries[-1], dtype=int)
        for b, (lo, hi) in enumerate(zip(self.boundaries, self.boundaries[1:])):
            idx[lo:hi] = b
        return idx

    def negligible(self, rtol: float = NEGLIGIBLE_RTOL) -> np.ndarray:
        """Blocks whose largest singular value is at most ``rtol * sigma_max``."""
        return np.array([hi <= rtol * self.sigma_max for _, hi in self.block_sigmas])

    def to_dict(self) -> dict:
        return {
            "boundaries": list(self.boundaries),
            "row_boundaries": list(self.row_boundaries),
            "within_mass": self.within_mass,
            "block_sigmas": [list(s) for s in self.block_sigmas],
            "block_sigmas_next": [list(s) for s in self.block_sigmas_next],
        }


def _segment(mass: np.ndarray, penalty: float) -> list[tuple[int, int]]:
    # best score for rows[:r] x cols[:c] split into diagonal blocks, gain = mass - uniform share
    R, C = mass.shape
    total = mass.sum()
    P = np.zeros((R + 1, C + 1))
    P[1:, 1:] = mass.cumsum(0).cumsum(1)
    rs = np.arange(R + 1)[:, None]
    cs = np.arange(C + 1)[None, :]
    best = np.full((R + 1, C + 1), -np.inf)
    best[0, 0] = 0.0
    back = np.zeros((R + 1, C + 1, 2), dtype=int)
    for r in range(1, R + 1):
        for c in range(1, C + 1):
            block = P[r, c] - P[:r, c][:, None] - P[r, :c][None, :] + P[:r, :c]
            expected = total * (r - rs[:r]) * (c - cs[:, :c]) / (R * C)
            score = best[:r, :c] + block - expected - penalty
            k = int(np.argmax(score))
            i, j = divmod(k, c)
            best[r, c] = score[i, j]
            back[r, c] = (i, j)
    cuts = [(R, C)]
    while cuts[-1] != (0, 0):
        r, c = cuts[-1]
        cuts.append(tuple(back[r, c]))
    return cuts[::-1]


def _sigma_ranges(sigmas, cuts) -> tuple[tuple[float, float], ...]:
    if sigmas is None:
        return tuple((float("nan"), float("nan")) for _ in cuts[1:])
    s = np.asarray(sigmas, dtype=np.float64)
    return tuple((float(s[lo:hi].min()), float(s[lo:hi].max())) for lo, hi in zip(cuts, cuts[1:]))


def kernel_blocks(cross, sigmas_prev=None, sigmas_next=None, mass_threshold: float = 0.75, penalty: float | None = None):
    """Segment a cross adjacency into contiguous diagonal blocks.

    Dynamic programming over simultaneous row/column cut points maximizes
    ``sum_b (mass_b - total * rows_b * cols_b / (R * C)) - penalty * n_blocks``,
    with mass the squared entries. A segmentation whose within-block mass
    fraction stays below ``mass_threshold`` is rejected in favor of a single block.

    Parameters
    ----------
    cross : ndarray of shape (R, C)
        Cross adjacency, rows and columns ordered by decreasing singular value.
    sigmas_prev, sigmas_next : array_like, optional
        Singular values along columns and rows, used to annotate blocks.
    mass_threshold : float
        Minimal within-block mass fraction for a multi-block answer.
    penalty : float, optional
        Per-block penalty; defaults to ``total / (4 * min(R, C))``.
    """
    cross = np.asarray(cross, dtype=np.float64)
    if cross.ndim != 2 or cross.size == 0:
        raise ValueError("kernel_blocks needs a non-empty 2-D matrix")
    if sigmas_prev is not None and len(sigmas_prev) != cross.shape[1]:
        raise ValueError("sigmas_prev must have one entry per column")
    if sigmas_next is not None and len(sigmas_next) != cross.shape[0]:
        raise ValueError("sigmas_next must have one entry per row")
    mass = cross * cross
    total = float(mass.sum())
    R, C = mass.shape
    if penalty is None:
        penalty = total / (4 * min(R, C))
    cuts = _segment(mass, penalty) if total > 0 else [(0, 0), (R, C)]
    within = sum(float(mass[r0:r1, c0:c1].sum()) for (r0, c0), (r1, c1) in zip(cuts, cuts[1:]))
    frac = within / total if total > 0 else 1.0
    if len(cuts) > 2 and frac < mass_threshold:
        cuts, frac = [(0, 0), (R, C)], 1.0
    rows = tuple(int(r) for r, _ in cuts)
    cols = tuple(int(c) for _, c in cuts)
    smax = float(np.max(sigmas_prev)) if sigmas_prev is not None and len(sigmas_prev) else float("nan")
    return BlockPartition(
        boundaries=cols,
        row_boundaries=rows,
        within_mass=float(min(max(frac, 0.0), 1.0)),
        block_sigmas=_sigma_ranges(sigmas_prev, cols),
        block_sigmas_next=_sigma_ranges(sigmas_next, rows),
        sigma_max=smax,
    )


@dataclass(frozen=True)
class NeuronAssignment:
    block: np.ndarray
    purity: np.ndarray
    prunable: np.ndarray
    unambiguous: np.ndarray

    @property
    def prunable_indices(self) -> list[int]:
        return [int(k) for k in np.flatnonzero(self.prunable)]

    def to_dict(self) -> list[dict]:
        return [
            {"neuron": k, "block": int(b), "purity": float(p), "prunable": bool(q), "unambiguous": bool(u)}
            for k, (b, p, q, u) in enumerate(zip(self.block, self.purity, self.prunable, self.unambiguous))
        ]


def prunable_neurons(U_bar, partition: BlockPartition, ambiguity_tol: float = 1e-3, cutoff: float = NEGLIGIBLE_RTOL):
    """Map each usual neuron (row of ``U_bar``) to the block holding most of its squared mass.

    A neuron is prunable when its block is negligible (largest singular value
    at most ``cutoff * sigma_max``) and its purity is at least ``1 - ambiguity_tol``.
    """
    U_bar = np.asarray(U_bar, dtype=np.float64)
    if U_bar.shape[1] != partition.boundaries[-1]:
        raise ValueError(f"U_bar has {U_bar.shape[1]} columns, partition covers {partition.boundaries[-1]}")
    sq = U_bar * U_bar
    per_block = np.stack(
        [sq[:, lo:hi].sum(axis=1) for lo, hi in zip(partition.boundaries, partition.boundaries[1:])], axis=1
    )
    block = per_block.argmax(axis=1)
    norm = sq.sum(axis=1)
    purity = np.divide(per_block.max(axis=1), norm, out=np.zeros_like(norm), where=norm > 0)
    unambiguous = purity >= 1.0 - ambiguity_tol
    negligible = partition.negligible(cutoff)
    prunable = negligible[block] & unambiguous
    return NeuronAssignment(block, purity, prunable, unambiguous)


def prune_channels(spec: ModelSpec, store: WeightStore, layer: int, channels) -> WeightStore:
    """Zero the given output channels (rows) of a layer; shapes are preserved."""
    out = store.copy()
    name = spec.layers[layer].name
    w = out[name].copy()
    w[list(channels)] = 0.0
    out[name] = w
    return out


@dataclass(frozen=True)
class Equivalence:
    max_discrepancy: float
    agreement: float
    n_inputs: int


def equivalence_check(spec: ModelSpec, store: WeightStore, pruned_store: WeightStore, inputs) -> Equivalence:
    """Largest logit difference and argmax agreement rate between two weight sets."""
    from .flow import predict

    for layer in spec.layers:
        if store[layer.name].shape != pruned_store[layer.name].shape:
            raise ValueError(f"layer {layer.name!r}: pruned weights changed shape")
    inputs = np.asarray(inputs, dtype=np.float64)
    a = predict(spec, store, inputs)
    b = predict(spec, pruned_store, inputs)
    n = a.shape[0] if a.ndim > 1 else 1
    return Equivalence(
        float(np.abs(a - b).max(initial=0.0)),
        float(np.mean(np.argmax(a, axis=-1) == np.argmax(b, axis=-1))),
        int(n),
    )


# -- planted fixture -------------------------------------------------------------


@dataclass(frozen=True)
class PlantedKernel:
    """Two conv layers plus an fc head with planted near-kernel blocks at the shared channels."""

    spec: ModelSpec
    store: WeightStore
    dead_channels: tuple[int, ...]
    boundaries: tuple[int, ...]
    input_shape: tuple[int, int, int]


def planted_kernel_model(
    rng,
    block_sizes=(11, 3, 2),
    block_sigmas=((1.0, 0.5), (1e-8, 5e-9), (1e-10, 5e-11)),
    noise: float = 0.0,
    in_channels: int = 4,
    out_channels: int = 8,
    kernel: int = 3,
    image: int = 6,
    classes: int = 10,
) -> PlantedKernel:
    """Synthetic model whose cross adjacency at layer 0 is block-diagonal.

    Channels of the shared space are shuffled; the channels of every block but
    the first only carry negligible singular values and are the planted dead
    channels. ``noise`` adds Gaussian perturbations to the next layer with
    entry scale ``noise`` times the RMS entry.
    """
    o = int(sum(block_sizes))
    cuts = np.concatenate([[0], np.cumsum(block_sizes)]).astype(int)
    perm = rng.permutation(o)
    # left factor of layer 0: shuffled block-diagonal rotation
    U = np.zeros((o, o))
    Vt = np.zeros((o, o))
    for lo, hi in zip(cuts, cuts[1:]):
        U[lo:hi, lo:hi] = haar_orthogonal(hi - lo, rng)
        Vt[lo:hi, lo:hi] = haar_orthogonal(hi - lo, rng)
    U, Vt = U[perm], Vt[perm]
    S = np.concatenate([np.linspace(hi, lo, size) for size, (hi, lo) in zip(block_sizes, block_sigmas)])
    d0 = in_channels * kernel * kernel
    if d0 < o:
        raise ValueError("first layer too small for the planted rank")
    V0 = haar_orthogonal(d0, rng)[:, :o]
    W0 = U @ np.diag(S) @ V0.T
    # next layer, co-flattened: (out K^2) x o with right factor Vt, blocks ranked by sigma
    m = out_channels * kernel * kernel
    U1 = haar_orthogonal(m, rng)[:, :o]
    S1 = np.concatenate([np.linspace(hi, lo, size) for size, (hi, lo) in zip(block_sizes, ((8, 4), (3, 2), (1.5, 1)))])
    T1 = unflatten_conv_co(U1 @ np.diag(S1) @ Vt.T, out_channels, kernel)
    if noise > 0:
        T1 = T1 + noise * np.sqrt(np.mean(T1**2)) * rng.standard_normal(T1.shape)
    spatial = image * image
    W2 = rng.standard_normal((classes, out_channels * spatial)) / np.sqrt(out_channels * spatial)
    spec = ModelSpec(
        (
            LayerSpec("conv0", "conv", in_channels, o, kernel=kernel),
            LayerSpec("conv1", "conv", o, out_channels, kernel=kernel),
            LayerSpec("head", "fc", out_channels * spatial, classes, spatial=spatial),
        )
    )
    store = WeightStore({"conv0": unflatten_conv(W0, in_channels, kernel), "conv1": T1, "head": W2})
    dead = tuple(int(k) for k in np.flatnonzero(perm >= cuts[1]))
    return PlantedKernel(spec, store, dead, tuple(int(c) for c in cuts), (in_channels, image, image))
