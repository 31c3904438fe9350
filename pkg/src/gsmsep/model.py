"""Parameters of the jointly-diagonalizable spatial mixing model.

An M-channel mixture spectrogram is explained by N sources.  Source n has
a low-rank power spectrogram lambda_nft = sum_k w_nkf h_nkt (K basis
spectra W against K activation rows H) and a nonnegative weight row
g~_nm that places its power in the M coordinates obtained by projecting
each frequency bin through the mixing matrix Q_f.  The source spatial
covariance at frequency f is then Q_f^-1 Diag(g~_n) Q_f^-H.

The per-bin scale of the whole mixture may additionally be perturbed by a
positive impulse variable; the prior placed on it is selected by the
GsmVariant value and gives the heavy-tailed members of the family.
"""

from __future__ import annotations

import dataclasses
import json
import math
from typing import Union

import numpy as np

from . import linalg


# ---------------------------------------------------------------------------
# Bin-density variants (the impulse prior selects the family member).
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Gaussian:
    """Degenerate impulse prior (phi == 1): plain Gaussian bins."""


@dataclasses.dataclass(frozen=True)
class StudentT:
    """Inverse-gamma impulse prior with shape = scale = nu / 2."""

    nu: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.nu) and self.nu > 0):
            raise ValueError(f"nu must be finite and > 0, got {self.nu}")


@dataclasses.dataclass(frozen=True)
class LeptokurticGG:
    """Heavy-tailed generalized Gaussian bins, shape beta in (0, 2]."""

    beta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.beta) and 0 < self.beta <= 2):
            raise ValueError(f"beta must lie in (0, 2], got {self.beta}")


@dataclasses.dataclass(frozen=True)
class GH:
    """Generalized-inverse-Gaussian impulse prior GIG(gamma, rho, eta)."""

    gamma: float
    rho: float
    eta: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.gamma):
            raise ValueError(f"gamma must be finite, got {self.gamma}")
        if not (math.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"rho must be finite and > 0, got {self.rho}")
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ValueError(f"eta must be finite and > 0, got {self.eta}")


@dataclasses.dataclass(frozen=True)
class NIG:
    """Normal-inverse-Gaussian bins: the GH sub-family with gamma = -1/2.

    Kept as its own variant because every Bessel order in its statistics
    is half-integer, which admits an exact recurrence fast path.
    """

    rho: float
    eta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"rho must be finite and > 0, got {self.rho}")
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ValueError(f"eta must be finite and > 0, got {self.eta}")

    def as_gh(self) -> GH:
        return GH(gamma=-0.5, rho=self.rho, eta=self.eta)


GsmVariant = Union[Gaussian, StudentT, LeptokurticGG, GH, NIG]


def gh_from_ab(gamma: float, a: float, b: float) -> GH:
    """Build a GH variant from the alternative rate/product parameters.

    (a, b) = (rho / eta, rho * eta), so rho = sqrt(a b) and
    eta = sqrt(b / a).  The Student's t limit is gamma = -nu/2, b = nu,
    a -> 0.
    """
    if not (a > 0 and b > 0):
        raise ValueError(f"a and b must be > 0, got a={a}, b={b}")
    return GH(gamma=gamma, rho=math.sqrt(a * b), eta=math.sqrt(b / a))


# ---------------------------------------------------------------------------
# Run configuration.
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class SeparationConfig:
    n_sources: int
    n_bases: int
    iterations: int
    variant: GsmVariant = Gaussian()
    rank1: bool = False
    eps_init: float = 1e-2
    floor: float = 1e-10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_sources < 1:
            raise ValueError(f"n_sources must be >= 1, got {self.n_sources}")
        if self.n_bases < 1:
            raise ValueError(f"n_bases must be >= 1, got {self.n_bases}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if not (math.isfinite(self.eps_init) and self.eps_init >= 0):
            raise ValueError(f"eps_init must be >= 0, got {self.eps_init}")
        if not (math.isfinite(self.floor) and self.floor > 0):
            raise ValueError(f"floor must be > 0, got {self.floor}")


class DegenerateParameterError(ValueError):
    """A normalization divisor collapsed to zero."""


# ---------------------------------------------------------------------------
# Parameter container.
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class ModelParams:
    """W: (N, K, F) and H: (N, K, T) nonnegative, Q: (F, M, M) complex,
    Gtilde: (N, M) nonnegative."""

    W: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    Gtilde: np.ndarray

    def __post_init__(self) -> None:
        if self.W.ndim != 3 or self.H.ndim != 3 or self.Q.ndim != 3 or self.Gtilde.ndim != 2:
            raise ValueError("W, H, Q must be 3-D and Gtilde 2-D")
        n, k, f = self.W.shape
        if self.H.shape[:2] != (n, k):
            raise ValueError(f"H shape {self.H.shape} inconsistent with W {self.W.shape}")
        m = self.Gtilde.shape[1]
        if self.Gtilde.shape[0] != n:
            raise ValueError(f"Gtilde shape {self.Gtilde.shape} inconsistent with N={n}")
        if self.Q.shape != (f, m, m):
            raise ValueError(f"Q shape {self.Q.shape}, expected {(f, m, m)}")

    @property
    def n_sources(self) -> int:
        return self.W.shape[0]

    @property
    def n_bases(self) -> int:
        return self.W.shape[1]

    @property
    def n_freq(self) -> int:
        return self.W.shape[2]

    @property
    def n_frames(self) -> int:
        return self.H.shape[2]

    @property
    def n_channels(self) -> int:
        return self.Gtilde.shape[1]


def init_params(cfg: SeparationConfig, n_freq: int, n_frames: int,
                n_channels: int) -> ModelParams:
    """Seeded starting point for the optimizer.

    W and H are |standard normal| draws from numpy's PCG64 generator
    seeded with cfg.seed (W is drawn first, then H).  Q_f starts at the
    identity.  Gtilde row n has weight 1 at the channels m with
    m mod N == n and cfg.eps_init elsewhere; under the rank-1 constraint
    (N == M) it is frozen to the exact identity instead.
    """
    n, k, m = cfg.n_sources, cfg.n_bases, n_channels
    if cfg.rank1 and n != m:
        raise ValueError(
            f"rank-1 spatial model requires n_sources == n_channels, got N={n}, M={m}"
        )
    if n > m:
        raise ValueError(f"underdetermined model not supported: N={n} > M={m}")
    rng = np.random.default_rng(cfg.seed)
    W_NKF = np.abs(rng.standard_normal((n, k, n_freq)))
    H_NKT = np.abs(rng.standard_normal((n, k, n_frames)))
    Q_FMM = np.tile(np.eye(m, dtype=np.complex128), (n_freq, 1, 1))
    eps = 0.0 if cfg.rank1 else cfg.eps_init
    G_NM = np.full((n, m), eps)
    for col in range(m):
        G_NM[col % n, col] = 1.0
    return ModelParams(W=W_NKF, H=H_NKT, Q=Q_FMM, Gtilde=G_NM)


def normalize(params: ModelParams) -> ModelParams:
    """Rescale the three scale ambiguities out of the parameters.

    Order matters: first the mixing-matrix scale r_f = M Tr(Q_f Q_f^H)
    moves into W, then the per-source channel weight sum u_n, then the
    per-basis spectrum sum v_nk moves into H.  The marginal likelihood is
    invariant under all three.
    """
    W_NKF = params.W.copy()
    H_NKT = params.H.copy()
    Q_FMM = params.Q.copy()
    G_NM = params.Gtilde.copy()
    m = G_NM.shape[1]

    r_F = m * np.einsum("fij,fij->f", Q_FMM, Q_FMM.conj()).real
    if np.any(r_F <= 0):
        raise DegenerateParameterError(
            f"zero mixing-matrix scale at frequency {int(np.argmin(r_F))}"
        )
    Q_FMM /= np.sqrt(r_F)[:, None, None]
    W_NKF /= r_F[None, None, :]

    u_N = G_NM.sum(axis=1)
    if np.any(u_N <= 0):
        raise DegenerateParameterError(
            f"zero channel-weight sum for source {int(np.argmin(u_N))}"
        )
    G_NM /= u_N[:, None]
    W_NKF *= u_N[:, None, None]

    v_NK = W_NKF.sum(axis=2)
    if np.any(v_NK <= 0):
        bad = np.unravel_index(int(np.argmin(v_NK)), v_NK.shape)
        raise DegenerateParameterError(f"zero basis-spectrum sum at (n, k) = {bad}")
    W_NKF /= v_NK[:, :, None]
    H_NKT *= v_NK[:, :, None]

    return ModelParams(W=W_NKF, H=H_NKT, Q=Q_FMM, Gtilde=G_NM)


def source_psd(params: ModelParams) -> np.ndarray:
    """lambda_NFT = sum_k w_nkf h_nkt."""
    return np.matmul(params.W.transpose(0, 2, 1), params.H)


def compute_ytilde(params: ModelParams, floor: float,
                   lambda_NFT: np.ndarray | None = None) -> np.ndarray:
    """y~_FTM = sum_n lambda_nft g~_nm, floored elementwise at `floor`."""
    if floor <= 0:
        raise ValueError(f"floor must be > 0, got {floor}")
    if lambda_NFT is None:
        lambda_NFT = source_psd(params)
    y_FTM = np.tensordot(lambda_NFT, params.Gtilde, axes=([0], [0]))
    return np.maximum(y_FTM, floor)


def reconstruct_scm(params: ModelParams, n: int, f: int) -> np.ndarray:
    """Source n's spatial covariance at frequency f: Q_f^-1 Diag(g~_n) Q_f^-H."""
    if not 0 <= n < params.n_sources:
        raise ValueError(f"source index {n} out of range")
    if not 0 <= f < params.n_freq:
        raise ValueError(f"frequency index {f} out of range")
    Qinv = linalg.invert(params.Q[f])
    return (Qinv * params.Gtilde[n][None, :]) @ Qinv.conj().T


# ---------------------------------------------------------------------------
# Checkpoints: JSON with a shape header and row-major value lists.
# ---------------------------------------------------------------------------

_CHECKPOINT_FORMAT = "gsmsep-params"
_CHECKPOINT_VERSION = 1


def _complex_to_interleaved(a: np.ndarray) -> list:
    flat = np.ascontiguousarray(a).ravel()
    out = np.empty(2 * flat.size)
    out[0::2] = flat.real
    out[1::2] = flat.imag
    return out.tolist()


def _interleaved_to_complex(values: list, shape: tuple) -> np.ndarray:
    flat = np.asarray(values, dtype=np.float64)
    return (flat[0::2] + 1j * flat[1::2]).reshape(shape)


def save_checkpoint(params: ModelParams, path) -> None:
    """Write params as JSON: shape header plus row-major (C-order) arrays.

    Real arrays are plain value lists; the complex Q is stored with
    interleaved [re, im, re, im, ...] entries.  Values round-trip exactly
    (repr-based float serialization).
    """
    payload = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "order": "C",
        "shapes": {
            "W": list(params.W.shape),
            "H": list(params.H.shape),
            "Q": list(params.Q.shape),
            "Gtilde": list(params.Gtilde.shape),
        },
        "W": params.W.ravel(order="C").tolist(),
        "H": params.H.ravel(order="C").tolist(),
        "Q": _complex_to_interleaved(params.Q),
        "Gtilde": params.Gtilde.ravel(order="C").tolist(),
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> ModelParams:
    with open(path, "r", encoding="ascii") as fh:
        payload = json.load(fh)
    if payload.get("format") != _CHECKPOINT_FORMAT:
        raise ValueError(f"not a parameter checkpoint: {path}")
    if payload.get("version") != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    shapes = {key: tuple(val) for key, val in payload["shapes"].items()}
    return ModelParams(
        W=np.asarray(payload["W"], dtype=np.float64).reshape(shapes["W"]),
        H=np.asarray(payload["H"], dtype=np.float64).reshape(shapes["H"]),
        Q=_interleaved_to_complex(payload["Q"], shapes["Q"]),
        Gtilde=np.asarray(payload["Gtilde"], dtype=np.float64).reshape(shapes["Gtilde"]),
    )
