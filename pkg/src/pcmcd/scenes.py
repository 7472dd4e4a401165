"""Synthetic SWIR scenes and the HSC1 cube file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .materials import spectral_grid

MAGIC = b"HSC1"
_HEADER = struct.Struct("<4sIII")
# channels nearest the 1.4 and 1.9 um water bands
BAD_BANDS_UM = (1.4, 1.9)


class CubeFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    H: int = 32
    W: int = 32
    endmembers: int = 4
    dips: tuple = (1, 3)
    dip_center: tuple = (1.0, 2.5)
    dip_width: tuple = (0.02, 0.15)
    dip_depth: tuple = (0.1, 0.5)
    smoothness: float = 4.0
    sharpness: float = 3.0
    bad_band_noise: float = 0.05
    seed: int = 0


def endmember_spectra(rng: np.random.Generator, spec: SceneSpec, wl: np.ndarray) -> np.ndarray:
    """Sloped baseline minus Gaussian absorption dips, clipped to [0, 1]."""
    out = np.empty((spec.endmembers, wl.size))
    for e in range(spec.endmembers):
        level = rng.uniform(0.3, 0.8)
        slope = rng.uniform(-0.15, 0.15)
        s = level + slope * (wl - wl.mean())
        for _ in range(rng.integers(spec.dips[0], spec.dips[1] + 1)):
            c = rng.uniform(*spec.dip_center)
            w = rng.uniform(*spec.dip_width)
            d = rng.uniform(*spec.dip_depth)
            s = s - d * np.exp(-0.5 * ((wl - c) / w) ** 2)
        out[e] = s
    return np.clip(out, 0.0, 1.0)


def abundance_maps(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    """(H, W, E) nonnegative abundances summing to one per pixel."""
    field = rng.standard_normal((spec.endmembers, spec.H, spec.W))
    field = np.stack([gaussian_filter(f, spec.smoothness, mode="wrap") for f in field])
    field /= field.std() + 1e-12
    z = spec.sharpness * field
    z -= z.max(axis=0, keepdims=True)
    a = np.exp(z)
    a /= a.sum(axis=0, keepdims=True)
    return a.transpose(1, 2, 0)


def generate_scene(spec: SceneSpec, index: int = 0, wl: np.ndarray | None = None) -> np.ndarray:
    """One (H, W, N) reflectance cube, float32-representable values in [0, 1]."""
    if spec.endmembers < 1:
        raise ValueError("need at least one endmember")
    wl = spectral_grid() if wl is None else wl
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    ends = endmember_spectra(rng, spec, wl)
    ab = abundance_maps(rng, spec)
    cube = ab @ ends
    if spec.bad_band_noise > 0:
        for b in BAD_BANDS_UM:
            j = int(np.argmin(np.abs(wl - b)))
            cube[..., j] *= 1.0 + spec.bad_band_noise * rng.standard_normal(cube.shape[:2])
    cube = np.clip(cube, 0.0, 1.0)
    return cube.astype(np.float32).astype(np.float64)


def gen_scenes(spec: SceneSpec, count: int) -> list[np.ndarray]:
    return [generate_scene(spec, i) for i in range(count)]


def write_cube(cube: np.ndarray, path) -> None:
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise CubeFormatError(f"cube must be 3-D, got shape {cube.shape}")
    H, W, N = cube.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, H, W, N))
        fh.write(np.ascontiguousarray(cube, dtype="<f4").tobytes())


def read_cube(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CubeFormatError(
            f"{path}: truncated header at byte offset {len(raw)}, expected {_HEADER.size} bytes")
    magic, H, W, N = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CubeFormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    count = H * W * N
    if count == 0:
        raise CubeFormatError(f"{path}: zero dimension in header at byte offset 4")
    expected = _HEADER.size + 4 * count
    if count > (1 << 40):
        raise CubeFormatError(f"{path}: dimension overflow ({H}x{W}x{N}) at byte offset 4")
    if len(raw) != expected:
        raise CubeFormatError(
            f"{path}: payload length mismatch at byte offset {len(raw)}: "
            f"expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size, count=count)
    return data.reshape(H, W, N).astype(np.float64)
