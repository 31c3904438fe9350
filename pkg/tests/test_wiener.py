"""Tests for multichannel Wiener reconstruction."""

import numpy as np
import pytest

from gsmsep.model import (
    Gaussian,
    ModelParams,
    SeparationConfig,
    init_params,
)
from gsmsep.optimizer import run
from gsmsep.stft import StftConfig, stft_forward, stft_inverse
from gsmsep.wiener import (
    SourceImages,
    rank_sources_by_energy,
    render_time_domain,
    separate,
)


def random_setup(seed=0, n=2, k=2, f=5, t=7, m=2):
    cfg = SeparationConfig(n_sources=n, n_bases=k, iterations=1, seed=seed)
    params = init_params(cfg, f, t, m)
    rng = np.random.default_rng(seed + 500)
    params.Q[:] = (
        rng.standard_normal((f, m, m))
        + 1j * rng.standard_normal((f, m, m))
        + 2.0 * m * np.eye(m)
    )
    X = rng.standard_normal((f, t, m)) + 1j * rng.standard_normal((f, t, m))
    return params, X


class TestSourceImages:
    def test_shape_validation(self):
        with pytest.raises(ValueError, match="N, F, T, M"):
            SourceImages(data=np.zeros((2, 3, 4)))

    def test_n_sources(self):
        images = SourceImages(data=np.zeros((3, 2, 2, 2)))
        assert images.n_sources == 3


class TestSeparate:
    def test_partition_identity(self):
        params, X = random_setup(seed=1)
        images = separate(X, params)
        total = images.data.sum(axis=0)
        np.testing.assert_allclose(total, X, rtol=1e-10, atol=1e-12)

    def test_partition_with_dead_bins(self):
        params, X = random_setup(seed=2)
        params.H[:, :, 3] = 0.0  # every source silent in frame 3
        images = separate(X, params)
        total = images.data.sum(axis=0)
        np.testing.assert_allclose(total, X, rtol=1e-10, atol=1e-12)
        # the dead frame is split uniformly after back-projection
        np.testing.assert_allclose(
            images.data[0][:, 3], images.data[1][:, 3], rtol=1e-10
        )

    def test_single_source_returns_mixture(self):
        params, X = random_setup(seed=3, n=1)
        images = separate(X, params)
        assert images.n_sources == 1
        np.testing.assert_array_equal(images.data[0], X)

    def test_equal_sources_halve_the_mixture(self):
        params, X = random_setup(seed=4)
        params.W[1] = params.W[0]
        params.H[1] = params.H[0]
        params.Gtilde[1] = params.Gtilde[0]
        images = separate(X, params)
        np.testing.assert_allclose(images.data[0], X / 2.0, rtol=1e-10)
        np.testing.assert_allclose(images.data[1], X / 2.0, rtol=1e-10)

    def test_dominant_source_takes_the_bin(self):
        # with one source's variance overwhelming the other's, its gain
        # approaches one and its image approaches the mixture
        params, X = random_setup(seed=5)
        params.W[0] *= 1e12
        params.Gtilde[0] = [1.0, 1.0]
        params.Gtilde[1] = [1e-12, 1e-12]
        images = separate(X, params)
        np.testing.assert_allclose(images.data[0], X, rtol=1e-6)

    def test_variant_free_signature(self):
        # the filter uses only the fitted parameters: images from the
        # same params agree no matter which variant produced them
        params, X = random_setup(seed=6)
        a = separate(X, params)
        b = separate(X.copy(), params)
        np.testing.assert_array_equal(a.data, b.data)

    def test_shape_mismatch(self):
        params, X = random_setup(seed=7)
        with pytest.raises(ValueError, match="inconsistent"):
            separate(X[:, :3], params)

    def test_after_optimizer_run(self):
        cfg = SeparationConfig(n_sources=2, n_bases=2, iterations=8, seed=8)
        rng = np.random.default_rng(9)
        X = rng.standard_normal((6, 10, 2)) + 1j * rng.standard_normal((6, 10, 2))
        params, _ = run(X, cfg)
        images = separate(X, params)
        np.testing.assert_allclose(
            images.data.sum(axis=0), X, rtol=1e-10, atol=1e-12
        )


class TestRanking:
    def test_energy_order(self):
        data = np.zeros((3, 2, 2, 1), dtype=np.complex128)
        data[0] = 1.0
        data[1] = 3.0
        data[2] = 2.0
        assert rank_sources_by_energy(SourceImages(data=data)) == [1, 2, 0]

    def test_tie_keeps_lower_index(self):
        data = np.zeros((3, 2, 2, 1), dtype=np.complex128)
        data[0] = 2.0
        data[1] = 5.0
        data[2] = 2.0
        assert rank_sources_by_energy(SourceImages(data=data)) == [1, 0, 2]

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(10)
        data = rng.standard_normal((4, 3, 5, 2)) + 1j * rng.standard_normal((4, 3, 5, 2))
        images = SourceImages(data=data)
        energies = [float(np.mean(np.abs(data[n]) ** 2)) for n in range(4)]
        expected = sorted(range(4), key=lambda n: (-energies[n], n))
        assert rank_sources_by_energy(images) == expected


class TestRenderTimeDomain:
    def test_round_trip_of_images(self):
        cfg = StftConfig(n_fft=64, hop=16)
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, 512))
        spec = stft_forward(x, cfg)
        images = SourceImages(data=np.stack([spec, 2.0 * spec]))
        rendered = render_time_domain(images, cfg, 512)
        assert len(rendered) == 2
        assert rendered[0].shape == (2, 512)
        np.testing.assert_allclose(rendered[0], x, atol=1e-10)
        np.testing.assert_allclose(rendered[1], 2.0 * x, atol=1e-10)

    def test_matches_direct_inverse(self):
        cfg = StftConfig(n_fft=64, hop=16)
        rng = np.random.default_rng(12)
        spec = stft_forward(rng.standard_normal((2, 256)), cfg)
        images = SourceImages(data=spec[None])
        rendered = render_time_domain(images, cfg, 256)
        np.testing.assert_array_equal(rendered[0], stft_inverse(spec, cfg, 256))
