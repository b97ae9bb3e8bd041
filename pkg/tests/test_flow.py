import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.signal import correlate2d

from svrgraph.flow import (
    SOBEL_X,
    SOBEL_Y,
    classify,
    cosine_similarity,
    downsample,
    edge_similarity,
    forward,
    pool2d,
    predict,
    sobel,
    spectral_activations,
    spectral_images,
)
from svrgraph.linalg import conv2d, flatten_conv, svd
from svrgraph.tensorio import LayerSpec, ModelSpec, Pooling, WeightStore


def fc_model(rng, widths, activation="relu"):
    spec = ModelSpec.mlp(widths, activation=activation)
    return spec, WeightStore({l.name: rng.standard_normal(l.weight_shape) for l in spec.layers})


def conv_model(rng, pooling=None):
    spec = ModelSpec(
        (
            LayerSpec("c0", "conv", 2, 4, kernel=3, pooling_after=pooling),
            LayerSpec("c1", "conv", 4, 3, kernel=3),
        )
    )
    return spec, WeightStore({"c0": rng.standard_normal((4, 2, 3, 3)), "c1": rng.standard_normal((3, 4, 3, 3))})


class TestForward:
    def test_identity_weights(self, rng):
        spec = ModelSpec.mlp([3, 3, 3])
        store = WeightStore({"fc0": np.eye(3), "fc1": np.eye(3)})
        x = rng.random(3)
        assert_allclose(forward(spec, store, x).output, x)

    def test_naive_oracle(self, rng):
        spec, store = fc_model(rng, [4, 3, 2])
        x = rng.standard_normal((5, 4))
        expected = np.maximum(x @ store["fc0"].T, 0) @ store["fc1"].T
        assert np.abs(predict(spec, store, x) - expected).max() <= 1e-12
        assert np.abs(forward(spec, store, x[0]).output - expected[0]).max() <= 1e-12

    def test_argmax_head(self):
        spec = ModelSpec.mlp([2, 2])
        assert classify(spec, WeightStore({"fc0": np.eye(2)}), np.array([0.1, 2.0])) == 1

    def test_trace_lengths(self, rng):
        spec, store = fc_model(rng, [6, 4, 5, 3])
        tr = forward(spec, store, rng.standard_normal(6))
        assert [len(y) for y in tr.Y] == [4, 4, 3]
        assert len(tr.X) == 4

    def test_linear_consistency(self, rng):
        spec, store = fc_model(rng, [6, 4, 5, 3], activation="identity")
        tr = forward(spec, store, rng.standard_normal(6))
        for i, layer in enumerate(spec.layers):
            f = svd(store[layer.name])
            assert np.abs(tr.X[i + 1] - f.U @ (f.S * (f.V.T @ tr.X[i]))).max() <= 1e-10

    def test_relu_homogeneity(self, rng):
        spec, store = fc_model(rng, [6, 8, 8, 4])
        x = rng.standard_normal((100, 6))
        scaled = WeightStore({k: 2.5 * v for k, v in store.tensors.items()})
        assert_allclose(predict(spec, scaled, x), 2.5**3 * predict(spec, store, x), rtol=1e-12)
        assert_array_equal(classify(spec, scaled, x), classify(spec, store, x))

    def test_shape_mismatch(self, rng):
        spec, store = fc_model(rng, [4, 3])
        with pytest.raises(ValueError):
            forward(spec, store, np.zeros(5))

    def test_pooling_in_forward(self, rng):
        spec, store = conv_model(rng, Pooling("max", 2))
        tr = forward(spec, store, rng.standard_normal((2, 8, 8)))
        assert tr.X[1].shape == (4, 8, 8) and tr.X[2].shape == (3, 4, 4)

    def test_conv_to_fc(self, rng):
        spec = ModelSpec((LayerSpec("c", "conv", 1, 2, kernel=3), LayerSpec("f", "fc", 2 * 16, 3, spatial=16)))
        store = WeightStore({"c": rng.standard_normal((2, 1, 3, 3)), "f": rng.standard_normal((3, 32))})
        x = rng.standard_normal((5, 1, 4, 4))
        h = np.maximum(np.stack([np.stack([conv2d(xi, store["c"][k]) for k in range(2)]) for xi in x]), 0)
        assert_allclose(predict(spec, store, x), h.reshape(5, -1) @ store["f"].T, atol=1e-12)


class TestSpectral:
    def test_first_layer_definition(self, rng):
        spec, store = fc_model(rng, [5, 4, 3])
        x = rng.standard_normal(5)
        f = svd(store["fc0"])
        assert_allclose(spectral_activations(spec, store, x)[0], f.V.T @ np.maximum(x, 0), atol=1e-14)

    def test_identity_v(self, rng):
        spec = ModelSpec.mlp([3, 3, 3])
        store = WeightStore({"fc0": rng.standard_normal((3, 3)), "fc1": np.diag([3.0, 2.0, 1.0])})
        tr = forward(spec, store, rng.standard_normal(3))
        assert_allclose(tr.Y[1], np.maximum(tr.X[1], 0), atol=1e-14)

    def test_conv_reconstruction(self, rng):
        spec, store = conv_model(rng)
        x = rng.standard_normal((2, 6, 6))
        f = svd(flatten_conv(store["c0"]))
        Y = spectral_activations(spec, store, x)[0]
        x_relu = np.maximum(x, 0)
        for k in range(4):
            recon = np.einsum("m,mhw->hw", f.U[k] * f.S, Y)
            assert np.abs(recon - conv2d(x_relu, store["c0"][k])).max() <= 1e-8

    def test_single_filter(self, rng):
        spec = ModelSpec((LayerSpec("c", "conv", 1, 1, kernel=3),))
        filt = rng.standard_normal((1, 1, 3, 3))
        x = rng.random((1, 5, 5))
        f = svd(flatten_conv(filt))
        Y = spectral_images(spec, WeightStore({"c": filt}), x, 0, top_k=1)
        assert Y.shape == (1, 5, 5)
        assert_allclose(f.U[0, 0] * f.S[0] * Y[0], conv2d(x, filt[0]), atol=1e-12)

    def test_zero_input(self, rng):
        spec, store = conv_model(rng)
        assert_array_equal(spectral_images(spec, store, np.zeros((2, 5, 5)), 1), 0.0)

    def test_definition_oracle_after_pooling(self, rng):
        spec, store = conv_model(rng, Pooling("avg", 2))
        img = rng.random((2, 8, 8))
        f1 = svd(flatten_conv(store["c1"]))
        h = np.stack([conv2d(img, store["c0"][k]) for k in range(4)])
        h = np.maximum(h, 0).reshape(4, 4, 2, 4, 2).mean(axis=(2, 4))
        expected = np.stack([conv2d(h, f1.V[:, m].reshape(4, 3, 3)) for m in range(2)])
        Y = spectral_images(spec, store, img, 1, top_k=2)
        assert Y.shape == (2, 4, 4)
        assert np.abs(Y - expected).max() <= 1e-12

    def test_fc_layer_rejected(self, rng):
        spec, store = fc_model(rng, [4, 3])
        with pytest.raises(ValueError):
            spectral_images(spec, store, np.zeros((1, 2, 2)), 0)


class TestSobel:
    def test_constant(self):
        assert_allclose(sobel(np.full((6, 6), 3.0))[1:-1, 1:-1], 0.0)

    def test_vertical_edge(self):
        img = np.zeros((7, 8))
        img[:, 4:] = 1.0
        s = sobel(img)
        interior = s[1:-1, 1:-1]
        cols = np.argmax(interior, axis=1) + 1
        assert set(cols) <= {3, 4}
        assert_allclose(interior[:, 2:4].max(), 4.0)

    def test_oracle(self, rng):
        img = rng.random((9, 11))
        gx = correlate2d(img, SOBEL_X, mode="same", boundary="fill")
        gy = correlate2d(img, SOBEL_Y, mode="same", boundary="fill")
        assert np.abs(sobel(img) - np.hypot(gx, gy)).max() <= 1e-12

    def test_downsample_rgb(self, rng):
        img = rng.random((8, 6, 3))
        out = downsample(img, 2)
        assert out.shape == (4, 3)
        assert_allclose(out[0, 0], img[:2, :2].mean())

    def test_downsample_channels_first(self, rng):
        img = rng.random((1, 4, 4))
        assert_allclose(downsample(img, 2), img[0].reshape(2, 2, 2, 2).mean(axis=(1, 3)))

    def test_downsample_not_divisible(self):
        with pytest.raises(ValueError):
            downsample(np.zeros((5, 6)), 2)

    def test_pool2d(self):
        x = np.arange(16.0).reshape(1, 4, 4)
        assert_array_equal(pool2d(x, Pooling("max", 2)), [[[5.0, 7.0], [13.0, 15.0]]])


class TestCosine:
    def test_proportional(self, rng):
        a = rng.random((3, 3))
        assert cosine_similarity(a, 4 * a) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 2.0]) == 0.0

    def test_zero_vector(self):
        assert cosine_similarity(np.zeros(4), np.ones(4)) == 0.0

    def test_edge_similarity(self, rng):
        spec, store = conv_model(rng)
        images = rng.random((5, 2, 6, 6))
        sim = edge_similarity(spec, store, images, 0, top_k=3)
        assert sim.mean.shape == (3,) and sim.n == 5
        assert np.all((sim.mean >= 0) & (sim.mean <= 1))
        assert len(sim.rows()) == 3

    def test_edge_similarity_empty(self, rng):
        spec, store = conv_model(rng)
        with pytest.raises(ValueError):
            edge_similarity(spec, store, [], 0)
