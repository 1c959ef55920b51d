"""Random generation of true patterns and matrix-normal measurement noise."""

from __future__ import annotations

from itertools import product

import numpy as np

from ..errors import InvalidArgumentError
from ..noise import sqrt_psd

NOISE_DISTRIBUTIONS = ("gaussian", "chi2_df6", "t_df6")


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent Philox substream for one simulation trial.

    The stream depends only on ``(seed, trial)``, so trials can be run in any
    order or on any number of workers and still reproduce exactly.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(trial)])
    return np.random.Generator(np.random.Philox(ss))


def standard_draws(rng: np.random.Generator, shape, distribution: str = "gaussian") -> np.ndarray:
    """Zero-mean, unit-variance draws; the non-Gaussian options are skewed or heavy-tailed."""
    if distribution == "gaussian":
        return rng.standard_normal(shape)
    if distribution == "chi2_df6":
        return (rng.chisquare(6, shape) - 6.0) / np.sqrt(12.0)
    if distribution == "t_df6":
        return rng.standard_t(6, shape) / np.sqrt(1.5)
    raise InvalidArgumentError(
        f"unknown noise distribution {distribution!r}; choose from {NOISE_DISTRIBUTIONS}")


def _is_identity(a):
    return a.shape[0] == a.shape[1] and np.array_equal(a, np.eye(a.shape[0]))


def exact_signal(root_gs: np.ndarray, p: int, rng: np.random.Generator) -> np.ndarray:
    """Patterns ``B`` with ``B B' / P`` equal to ``root_gs @ root_gs``."""
    k = root_gs.shape[0]
    z = rng.standard_normal((k, p))
    w, u = np.linalg.eigh(z @ z.T / p)
    z_white = ((u / np.sqrt(w)) @ u.T) @ z
    return root_gs @ z_white


def generate_signal(g: np.ndarray, s: float, p: int, rng: np.random.Generator) -> np.ndarray:
    """True K x P activity patterns whose second moment ``B B' / P`` is exactly ``G s``.

    Gaussian rows are whitened empirically across channels and then coloured
    with the symmetric square root of ``G s``. Requires ``p >= k``.
    """
    g = np.asarray(g, dtype=np.float64)
    k = g.shape[0]
    if g.shape != (k, k):
        raise InvalidArgumentError(f"second moment must be square, got {g.shape}")
    if s < 0:
        raise InvalidArgumentError(f"signal strength must be >= 0, got {s}")
    if p < k:
        raise InvalidArgumentError(
            f"exact second moment needs at least as many channels as conditions (p={p} < k={k})")
    if s == 0:
        return np.zeros((k, p))
    return exact_signal(sqrt_psd(g * s), p, rng)


def noise_from_roots(root_k: np.ndarray, root_p: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Colour standard draws ``z`` (..., K, P) as ``root_k @ z @ root_p``."""
    if not _is_identity(root_k):
        z = np.matmul(root_k, z)
    if not _is_identity(root_p):
        z = np.matmul(z, root_p)
    return z


def generate_noise(sigma_k: np.ndarray, sigma_p: np.ndarray, rng: np.random.Generator,
                   size: int | None = None, distribution: str = "gaussian") -> np.ndarray:
    """Matrix-normal noise ``S_K^{1/2} Z S_P^{1/2}`` of shape (K, P), or (size, K, P)."""
    sigma_k = np.asarray(sigma_k, dtype=np.float64)
    sigma_p = np.asarray(sigma_p, dtype=np.float64)
    if sigma_k.ndim != 2 or sigma_k.shape[0] != sigma_k.shape[1]:
        raise InvalidArgumentError(f"sigma_k must be square, got {sigma_k.shape}")
    if sigma_p.ndim != 2 or sigma_p.shape[0] != sigma_p.shape[1]:
        raise InvalidArgumentError(f"sigma_p must be square, got {sigma_p.shape}")
    k, p = sigma_k.shape[0], sigma_p.shape[0]
    shape = (k, p) if size is None else (size, k, p)
    z = standard_draws(rng, shape, distribution)
    return noise_from_roots(sqrt_psd(sigma_k), sqrt_psd(sigma_p), z)


def voxel_grid(dims) -> np.ndarray:
    """Integer coordinates of a regular grid, one row per voxel (C order)."""
    return np.array(list(product(*(range(int(n)) for n in dims))), dtype=float)


def gaussian_spatial_covariance(grid, s2: float) -> np.ndarray:
    """Channel covariance ``exp(-d_ij^2 / s2)`` over voxels of a regular grid.

    ``grid`` gives the grid dimensions, e.g. ``(6, 6, 6)``. Distances are in
    voxel widths. ``s2 = 0`` gives the identity (independent voxels).
    """
    if s2 < 0:
        raise InvalidArgumentError(f"kernel variance must be >= 0, got {s2}")
    xyz = voxel_grid(grid)
    d2 = ((xyz[:, None, :] - xyz[None, :, :]) ** 2).sum(-1)
    if s2 == 0:
        return np.eye(len(xyz))
    return np.exp(-d2 / s2)
