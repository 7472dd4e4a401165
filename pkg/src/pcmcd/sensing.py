"""Compressive measurement model, SNR-referenced noise, conditioning and
reconstruction metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PSNR_CAP = 99.0


class SensingError(ValueError):
    pass


class ZeroSignalError(SensingError):
    pass


def encode(cube: np.ndarray, bank: np.ndarray) -> np.ndarray:
    """Noise-free measurements y = Phi x for every pixel of an (H, W, N) cube."""
    cube = np.asarray(cube, dtype=float)
    bank = np.asarray(bank, dtype=float)
    if cube.shape[-1] != bank.shape[1]:
        raise SensingError(
            f"cube has N={cube.shape[-1]} channels but filter bank has N={bank.shape[1]}")
    return cube @ bank.T


def noise_sigma(meas: np.ndarray, snr_db: float) -> float:
    """Standard deviation giving ``snr_db`` against the global mean power."""
    power = float(np.mean(np.square(meas)))
    if power == 0.0:
        raise ZeroSignalError("measurement is identically zero; SNR undefined")
    return math.sqrt(power / 10.0 ** (snr_db / 10.0))


def add_noise(meas: np.ndarray, snr_db: float, seed) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise at ``snr_db``; ``inf`` is a no-op."""
    meas = np.asarray(meas, dtype=float)
    if math.isinf(snr_db) and snr_db > 0:
        return meas.copy()
    if not math.isfinite(snr_db):
        raise SensingError(f"invalid SNR {snr_db}")
    sigma = noise_sigma(meas, snr_db)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return meas + sigma * rng.standard_normal(meas.shape)


@dataclass(frozen=True)
class Conditioning:
    value: float
    rank_deficient: bool
    singular_values: np.ndarray


def conditioning(bank: np.ndarray, rtol: float = 1e-12) -> Conditioning:
    bank = np.asarray(bank, dtype=float)
    M, N = bank.shape
    if M > N:
        raise SensingError(f"filter bank must be wide (M <= N), got {bank.shape}")
    s = np.linalg.svd(bank, compute_uv=False)
    if s[0] == 0 or s[-1] < rtol * s[0]:
        return Conditioning(math.inf, True, s)
    return Conditioning(float(s[0] / s[-1]), False, s)


def condition_number(bank: np.ndarray) -> float:
    """sigma_max / sigma_min over the M singular values; ``inf`` if rank deficient."""
    return conditioning(bank).value


@dataclass(frozen=True)
class Metrics:
    psnr: float
    sam: float
    mse: float

    def csv(self) -> str:
        return f"psnr={self.psnr:.4f}, sam={self.sam:.6f}, mse={self.mse:.6g}"


def mse(truth, recon) -> float:
    truth, recon = np.asarray(truth, dtype=float), np.asarray(recon, dtype=float)
    if truth.shape != recon.shape:
        raise SensingError(f"shape mismatch {truth.shape} vs {recon.shape}")
    return float(np.mean(np.square(truth - recon)))


def psnr_from_mse(m: float) -> float:
    if m <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / m))


def sam(truth, recon) -> float:
    """Mean spectral angle (radians) over pixels with non-zero spectra."""
    truth, recon = np.asarray(truth, dtype=float), np.asarray(recon, dtype=float)
    if truth.shape != recon.shape:
        raise SensingError(f"shape mismatch {truth.shape} vs {recon.shape}")
    a = truth.reshape(-1, truth.shape[-1])
    b = recon.reshape(-1, recon.shape[-1])
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    if not ok.any():
        return 0.0
    # Kahan's half-angle form: exact zero for identical directions, no arccos
    # rounding near 0 or pi
    ua = a[ok] / na[ok, None]
    ub = b[ok] / nb[ok, None]
    ang = 2.0 * np.arctan2(np.linalg.norm(ua - ub, axis=1), np.linalg.norm(ua + ub, axis=1))
    return float(np.mean(ang))


def metrics(truth, recon) -> Metrics:
    m = mse(truth, recon)
    return Metrics(psnr_from_mse(m), sam(truth, recon), m)
