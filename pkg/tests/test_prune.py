import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from svrgraph.linalg import flatten_conv, haar_orthogonal, svd
from svrgraph.prune import (
    BlockPartition,
    equivalence_check,
    kernel_blocks,
    planted_kernel_model,
    prunable_neurons,
    prune_channels,
    prune_to_internal_dims,
    truncate_layer,
)
from svrgraph.spectra import build_svr, cross_adjacency_at, spec_from_weights
from svrgraph.tensorio import LayerSpec, ModelSpec, WeightStore, load_model, save_model
from svrgraph.flow import predict


def store_for(spec, weights):
    return WeightStore({l.name: w for l, w in zip(spec.layers, weights)})


def _scramble_tail(Q, k, rng):
    Q = Q.copy()
    Q[:, k:] = Q[:, k:] @ haar_orthogonal(Q.shape[1] - k, rng)
    return Q


def planted_rank_model(rng, k, n=40, n0=60, m=30, floor=0.05):
    """fc [n0, n, n, m] whose consecutive layers share a k-dim strong subspace."""
    shared = [haar_orthogonal(n, rng) for _ in range(2)]

    def layer(left, right, rows, cols):
        r = min(rows, cols)
        S = np.concatenate([np.linspace(5, 3, k), floor * np.sort(rng.random(r - k))[::-1]])
        return _scramble_tail(left, k, rng)[:, :r] @ np.diag(S) @ _scramble_tail(right, k, rng)[:, :r].T

    ws = [
        layer(shared[0], haar_orthogonal(n0, rng), n, n0),
        layer(shared[1], shared[0], n, n),
        layer(haar_orthogonal(m, rng), shared[1], m, n),
    ]
    spec = spec_from_weights(ws)
    return spec, store_for(spec, ws)


def block_cross(rng, sizes, noise=0.0):
    n = sum(sizes)
    U, V = np.zeros((n, n)), np.zeros((n, n))
    lo = 0
    for s in sizes:
        U[lo : lo + s, lo : lo + s] = haar_orthogonal(s, rng)
        V[lo : lo + s, lo : lo + s] = haar_orthogonal(s, rng)
        lo += s
    C = np.abs(V.T @ U)
    rms = np.sqrt(np.mean(C[C > 0] ** 2))
    off = C == 0
    C[off] = noise * rms * np.abs(rng.standard_normal(off.sum()))
    return C


class TestTruncate:
    def test_full_rank_noop(self, rng):
        W = rng.standard_normal((6, 9))
        assert_allclose(truncate_layer(svd(W), 6), W, atol=1e-10)

    def test_rank_one_exact(self, rng):
        W = np.outer(rng.standard_normal(5), rng.standard_normal(4))
        assert_allclose(truncate_layer(svd(W), 1), W, atol=1e-12)

    def test_eckart_young(self, rng):
        W = rng.standard_normal((6, 9))
        f = svd(W)
        W3 = truncate_layer(f, 3)
        assert abs(np.linalg.norm(W - W3) ** 2 - np.sum(f.S[3:] ** 2)) <= 1e-10
        assert np.linalg.matrix_rank(W3) == 3

    def test_conv_shape(self, rng):
        T = rng.standard_normal((4, 2, 3, 3))
        layer = LayerSpec("c", "conv", 2, 4, kernel=3)
        out = truncate_layer(svd(flatten_conv(T)), 2, layer)
        assert out.shape == T.shape

    @pytest.mark.parametrize("keep", [0, 7])
    def test_keep_range(self, rng, keep):
        with pytest.raises(ValueError):
            truncate_layer(svd(rng.standard_normal((6, 9))), keep)


class TestInternalDimPruning:
    def test_full_rank_unchanged(self, rng):
        Q = haar_orthogonal(10, rng)[:, :2]
        spec = ModelSpec.mlp([2, 10, 2])
        store = WeightStore({"fc0": Q @ np.diag([2.0, 1.0]), "fc1": np.diag([3.0, 1.0]) @ Q.T})
        pruned, report = prune_to_internal_dims(spec, store, build_svr(spec, store))
        assert [r.kept for r in report] == [2, 2]
        for name in store:
            assert_allclose(pruned[name], store[name], atol=1e-12)

    @pytest.mark.parametrize("k", [3, 6, 10])
    def test_planted_rank(self, rng, k):
        spec, store = planted_rank_model(rng, k)
        pruned, report = prune_to_internal_dims(spec, store, build_svr(spec, store))
        assert [r.kept for r in report] == [k, k, k]
        assert all(np.linalg.matrix_rank(pruned[r.name], tol=1e-9) == k for r in report)

    def test_pruned_model_round_trip(self, rng, tmp_path):
        spec, store = planted_rank_model(rng, 4)
        pruned, _ = prune_to_internal_dims(spec, store, build_svr(spec, store))
        save_model(spec, pruned, tmp_path / "p.bin", tmp_path / "p.json")
        spec2, store2 = load_model(tmp_path / "p.bin", tmp_path / "p.json")
        out = predict(spec2, store2, rng.standard_normal((3, 60)))
        assert out.shape == (3, 30) and np.all(np.isfinite(out))


class TestKernelBlocks:
    def test_exact_fixture(self, rng):
        part = kernel_blocks(block_cross(rng, (6, 4, 3)))
        assert part.boundaries == (0, 6, 10, 13)
        assert part.row_boundaries == (0, 6, 10, 13)
        assert part.within_mass == pytest.approx(1.0)

    def test_off_block_noise(self, rng):
        part = kernel_blocks(block_cross(rng, (6, 4, 3), noise=0.01))
        assert part.boundaries == (0, 6, 10, 13)
        assert part.within_mass > 0.99

    @pytest.mark.parametrize("size", [10, 25])
    def test_uniform_single_block(self, rng, size):
        part = kernel_blocks(rng.random((size, size)))
        assert part.n_blocks == 1
        assert part.boundaries == (0, size)

    def test_scale_invariance(self, rng):
        fx = planted_kernel_model(rng)
        C, fp, fn = cross_adjacency_at(fx.spec, fx.store, 0)
        scaled = WeightStore({k: 3.0 * v for k, v in fx.store.tensors.items()})
        C2, fp2, fn2 = cross_adjacency_at(fx.spec, scaled, 0)
        assert kernel_blocks(C, fp.S, fn.S).boundaries == kernel_blocks(C2, fp2.S, fn2.S).boundaries

    def test_sigma_annotation(self, rng):
        part = kernel_blocks(block_cross(rng, (3, 2)), sigmas_prev=[5, 4, 3, 1e-9, 1e-10])
        assert part.block_sigmas == ((3.0, 5.0), (1e-10, 1e-9))
        assert_array_equal(part.negligible(), [False, True])
        assert_array_equal(part.column_block(), [0, 0, 0, 1, 1])

    def test_empty(self):
        with pytest.raises(ValueError):
            kernel_blocks(np.zeros((0, 3)))


def _partition(boundaries, sigmas):
    s = np.asarray(sigmas, dtype=float)
    ranges = tuple((float(s[a:b].min()), float(s[a:b].max())) for a, b in zip(boundaries, boundaries[1:]))
    return BlockPartition(tuple(boundaries), tuple(boundaries), 1.0, ranges, ranges, float(s.max()))


class TestPrunableNeurons:
    def test_block_diagonal_purity(self, rng):
        U = np.zeros((5, 5))
        U[:3, :3], U[3:, 3:] = haar_orthogonal(3, rng), haar_orthogonal(2, rng)
        a = prunable_neurons(U, _partition([0, 3, 5], [3, 2, 1, 1e-9, 1e-9]))
        assert_allclose(a.purity, 1.0)
        assert a.prunable_indices == [3, 4]
        assert list(a.block) == [0, 0, 0, 1, 1]

    def test_dense_single_block(self, rng):
        a = prunable_neurons(haar_orthogonal(6, rng), _partition([0, 6], np.linspace(1, 0.1, 6)))
        assert_array_equal(a.block, 0)
        assert a.prunable_indices == []

    def test_never_prunes_significant_block(self, rng):
        U = haar_orthogonal(4, rng)
        a = prunable_neurons(U, _partition([0, 2, 4], [1, 1, 1e-5, 1e-5]))
        assert a.prunable_indices == []

    def test_planted_dead_channels(self, rng):
        fx = planted_kernel_model(rng)
        C, fp, fn = cross_adjacency_at(fx.spec, fx.store, 0)
        part = kernel_blocks(C, fp.S, fn.S)
        assert part.boundaries == fx.boundaries
        a = prunable_neurons(fp.U, part)
        assert a.prunable_indices == list(fx.dead_channels)
        assert len(fx.dead_channels) == 5


class TestEquivalence:
    def test_nothing_pruned(self, rng):
        fx = planted_kernel_model(rng)
        x = rng.standard_normal((20,) + fx.input_shape)
        eq = equivalence_check(fx.spec, fx.store, fx.store.copy(), x)
        assert eq.max_discrepancy == 0.0 and eq.agreement == 1.0

    def test_exact_kernel(self, rng):
        W0 = rng.standard_normal((6, 8))
        W0[4:] = 0.0  # exact zero-sigma directions feed nothing
        spec = ModelSpec.mlp([8, 6, 3])
        store = WeightStore({"fc0": W0, "fc1": rng.standard_normal((3, 6))})
        pruned = prune_channels(spec, store, 0, [4, 5])
        eq = equivalence_check(spec, store, pruned, rng.standard_normal((50, 8)))
        assert eq.max_discrepancy <= 1e-8

    def test_negligible_sigma_agreement(self, rng):
        f = svd(rng.standard_normal((10, 12)))
        S = f.S.copy()
        S[6:] = 1e-13 * S[0]
        W0 = (f.U * S) @ f.V.T
        spec = ModelSpec.mlp([12, 10, 4])
        store = WeightStore({"fc0": W0, "fc1": rng.standard_normal((4, 10))})
        pruned = WeightStore({"fc0": truncate_layer(svd(W0), 6), "fc1": store["fc1"]})
        eq = equivalence_check(spec, store, pruned, rng.standard_normal((1000, 12)))
        assert eq.agreement == 1.0 and eq.n_inputs == 1000

    def test_shape_mismatch(self, rng):
        spec = ModelSpec.mlp([3, 2])
        with pytest.raises(ValueError):
            equivalence_check(spec, WeightStore({"fc0": np.ones((2, 3))}), WeightStore({"fc0": np.ones((3, 3))}), np.ones((1, 3)))
