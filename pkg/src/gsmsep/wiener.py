"""Multichannel Wiener reconstruction of source images.

Given the fitted model, the conditional mean of each source image is a
per-bin diagonal gain in the diagonalized domain followed by
back-projection, and the impulse variables cancel, so the filter depends
only on the spatial and spectral parameters, never on the tail variant.
The per-source gains sum to one in every bin by construction, so the
images partition the mixture exactly.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import linalg
from .model import ModelParams, source_psd
from .optimizer import project_mixture
from .stft import StftConfig, stft_inverse


@dataclasses.dataclass(frozen=True)
class SourceImages:
    """Estimated multichannel images, shape (n_sources, F, T, M)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 4:
            raise ValueError(f"expected (N, F, T, M) images, got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def n_sources(self) -> int:
        return self.data.shape[0]


def separate(X_FTM: np.ndarray, params: ModelParams) -> SourceImages:
    """Conditional-mean source images x^_nft = Q_f^-1 (gain_n * Q_f x_ft).

    gain_nftm = lambda_nft g~_nm / sum_n' lambda_n'ft g~_n'm.  Bins where
    every source variance vanishes get the uniform 1/N gain so the images
    still partition the mixture.
    """
    X_FTM = np.asarray(X_FTM, dtype=np.complex128)
    expected = (params.n_freq, params.n_frames, params.n_channels)
    if X_FTM.shape != expected:
        raise ValueError(
            f"mixture shape {X_FTM.shape} inconsistent with params {expected}"
        )
    n_sources = params.n_sources
    if n_sources == 1:
        return SourceImages(data=X_FTM[None].copy())

    Qinv_FMM = linalg.invert(params.Q)
    Qx_FTM = project_mixture(X_FTM, params.Q)
    lambda_NFT = source_psd(params)
    # unfloored total so the per-bin gains sum to exactly one
    total_FTM = np.tensordot(lambda_NFT, params.Gtilde, axes=([0], [0]))
    live_FTM = total_FTM > 0
    safe_total_FTM = np.where(live_FTM, total_FTM, 1.0)

    images_NFTM = np.empty((n_sources,) + X_FTM.shape, dtype=np.complex128)
    for n in range(n_sources):
        num_FTM = lambda_NFT[n][:, :, None] * params.Gtilde[n][None, None, :]
        gain_FTM = np.where(live_FTM, num_FTM / safe_total_FTM, 1.0 / n_sources)
        images_NFTM[n] = np.matmul(gain_FTM * Qx_FTM, Qinv_FMM.transpose(0, 2, 1))
    return SourceImages(data=images_NFTM)


def rank_sources_by_energy(images: SourceImages) -> list:
    """Source indices sorted by decreasing mean |x^|^2 over (f, t, m).

    Ties keep the lower index first.
    """
    energy_N = np.mean(np.abs(images.data) ** 2, axis=(1, 2, 3))
    order = np.argsort(-energy_N, kind="stable")
    return [int(n) for n in order]


def render_time_domain(images: SourceImages, stft_cfg: StftConfig,
                       n_samples: int) -> list:
    """Inverse-STFT each source's M channels independently.

    Returns one (M, n_samples) array per source; channel 1 (index 0) is
    the single-channel export convention.
    """
    return [
        stft_inverse(images.data[n], stft_cfg, n_samples)
        for n in range(images.n_sources)
    ]
