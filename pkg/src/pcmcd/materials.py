"""GSST optical constants: endpoint dispersion tables, Lorentz-Lorenz mixing over
crystallization fraction, and the fixed spectral / crystallization grids."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_CHANNELS = 100
N_LEVELS = 11
BAND = (1.0, 2.5)


class MaterialError(ValueError):
    pass


class WavelengthRangeError(MaterialError):
    pass


class SingularMixingError(MaterialError):
    pass


def crystal_levels(count: int = N_LEVELS) -> np.ndarray:
    """Equally spaced crystallization fractions 0.0, 0.1, ..., 1.0."""
    return np.linspace(0.0, 1.0, count)


def spectral_grid(n: int = N_CHANNELS, band: tuple = BAND) -> np.ndarray:
    """Channel centres in micrometres, uniform over ``band`` inclusive."""
    return np.linspace(band[0], band[1], n)


@dataclass(frozen=True)
class MaterialDispersion:
    """Complex permittivity of amorphous (``eps_a``) and crystalline
    (``eps_c``) GSST sampled on an ascending wavelength grid in micrometres."""

    wavelength: np.ndarray
    eps_a: np.ndarray
    eps_c: np.ndarray

    def __post_init__(self):
        wl = np.asarray(self.wavelength, dtype=float)
        if wl.ndim != 1 or wl.size < 2 or np.any(np.diff(wl) <= 0):
            raise MaterialError("wavelength grid must be strictly increasing")
        for name in ("eps_a", "eps_c"):
            e = np.asarray(getattr(self, name), dtype=complex)
            if e.shape != wl.shape:
                raise MaterialError(f"{name} has {e.shape}, grid has {wl.shape}")
            if np.any(e.imag < 0):
                raise MaterialError(f"{name} has negative imaginary part (gain)")
            object.__setattr__(self, name, e)
        object.__setattr__(self, "wavelength", wl)

    @classmethod
    def from_nk(cls, wavelength, n_a, k_a, n_c, k_c) -> "MaterialDispersion":
        na = np.asarray(n_a) + 1j * np.asarray(k_a)
        nc = np.asarray(n_c) + 1j * np.asarray(k_c)
        return cls(np.asarray(wavelength, dtype=float), na**2, nc**2)

    def endpoints(self, wavelength) -> tuple[np.ndarray, np.ndarray]:
        """Endpoint permittivities linearly interpolated at ``wavelength``."""
        wl = np.asarray(wavelength, dtype=float)
        lo, hi = self.wavelength[0], self.wavelength[-1]
        if np.any(wl < lo) or np.any(wl > hi):
            raise WavelengthRangeError(f"wavelength outside dispersion range [{lo}, {hi}] um")
        ea = np.interp(wl, self.wavelength, self.eps_a.real) + 1j * np.interp(
            wl, self.wavelength, self.eps_a.imag)
        ec = np.interp(wl, self.wavelength, self.eps_c.real) + 1j * np.interp(
            wl, self.wavelength, self.eps_c.imag)
        return ea, ec

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.wavelength, self.eps_a, self.eps_c):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def to_csv(self, path) -> None:
        na, ka = permittivity_to_nk(self.eps_a)
        nc, kc = permittivity_to_nk(self.eps_c)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["wavelength_um", "n_a", "k_a", "n_c", "k_c"])
            for row in zip(self.wavelength, na, ka, nc, kc):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "MaterialDispersion":
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            if header != ["wavelength_um", "n_a", "k_a", "n_c", "k_c"]:
                raise MaterialError(f"{path}: unexpected header {header}")
            rows = np.array([[float(v) for v in r] for r in reader if r])
        return cls.from_nk(*rows.T)


def default_dispersion(points: int = 151) -> MaterialDispersion:
    """Shipped synthetic GSST tables (configurable stand-ins, not measured data).

    Amorphous: lossless, n falls 3.35 -> 3.20 across 1.0-2.5 um.
    Crystalline: n falls 5.0 -> 4.6 with an absorption tail k = 0.12 -> 0.01.
    Both n curves are Cauchy-like A + B / lambda^2.
    """
    wl = np.linspace(BAND[0], BAND[1], points)
    shape = (1.0 / wl**2 - 1.0 / BAND[1] ** 2) / (1.0 / BAND[0] ** 2 - 1.0 / BAND[1] ** 2)
    n_a = 3.20 + 0.15 * shape
    n_c = 4.60 + 0.40 * shape
    k_a = np.zeros_like(wl)
    k_c = 0.12 * np.exp(-np.log(12.0) * (wl - BAND[0]) / (BAND[1] - BAND[0]))
    return MaterialDispersion.from_nk(wl, n_a, k_a, n_c, k_c)


def mix_permittivity(eps_a, eps_c, crystallinity):
    """Lorentz-Lorenz mix of two permittivities (vacuum host), vectorised."""
    c = np.asarray(crystallinity, dtype=float)
    if np.any((c < 0) | (c > 1)):
        raise MaterialError("crystallinity must lie in [0, 1]")
    ea = np.asarray(eps_a, dtype=complex)
    ec = np.asarray(eps_c, dtype=complex)
    F = c * (ec - 1) / (ec + 2) + (1 - c) * (ea - 1) / (ea + 2)
    if np.any(np.abs(1 - F) < 1e-12):
        raise SingularMixingError("resonant mixing: 1 - F vanishes")
    eps = (1 + 2 * F) / (1 - F)
    # endpoints are returned verbatim
    eps = np.where(c == 0, ea, eps)
    eps = np.where(c == 1, ec, eps)
    return eps


def effective_permittivity(disp: MaterialDispersion, wavelength, crystallinity):
    """Permittivity of partially crystallized GSST at ``wavelength`` (um)."""
    ea, ec = disp.endpoints(wavelength)
    return mix_permittivity(ea, ec, crystallinity)


def permittivity_to_nk(eps):
    """Principal square root of ``eps`` split into (n, k), both non-negative
    for passive media."""
    root = np.sqrt(np.asarray(eps, dtype=complex))
    # principal root has n >= 0; flip the branch if it lands with k < 0 and n == 0
    flip = (root.real == 0) & (root.imag < 0)
    root = np.where(flip, -root, root)
    return root.real, root.imag


def nk_table(disp: MaterialDispersion, wavelengths=None, levels=None):
    """n and k on the (level, wavelength) grid: two (M, N) arrays."""
    wl = spectral_grid() if wavelengths is None else np.asarray(wavelengths)
    lv = crystal_levels() if levels is None else np.asarray(levels)
    ea, ec = disp.endpoints(wl)
    eps = mix_permittivity(ea[None, :], ec[None, :], lv[:, None])
    return permittivity_to_nk(eps)
