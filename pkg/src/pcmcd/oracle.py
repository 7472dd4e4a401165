"""Reference shape -> filter-bank simulator and dataset writer.

The patterned GSST layer is homogenised laterally (volume-average permittivity
with air at the polygon fill factor) and treated as a single film on a
substrate at normal incidence.  This is the ground truth the surrogate learns.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .geometry import ShapeParams, fill_factor, sample_dataset_shape
from .materials import (MaterialDispersion, crystal_levels, default_dispersion,
                        mix_permittivity, permittivity_to_nk, spectral_grid)


class DatasetError(Exception):
    pass


@dataclass(frozen=True)
class StackSpec:
    thickness: float = 0.30
    substrate_n: float = 1.45
    superstrate_n: float = 1.0
    period: float = 1.0

    def __post_init__(self):
        if self.thickness <= 0:
            raise ValueError("film thickness must be positive")
        if self.substrate_n < 1:
            raise ValueError("substrate index must be >= 1")


def _film_coefficients(n, k, thickness, wavelength, substrate_n, superstrate_n=1.0):
    n0 = superstrate_n
    n1 = np.asarray(n) + 1j * np.asarray(k)
    ns = substrate_n
    r01 = (n0 - n1) / (n0 + n1)
    t01 = 2 * n0 / (n0 + n1)
    r12 = (n1 - ns) / (n1 + ns)
    t12 = 2 * n1 / (n1 + ns)
    ph = np.exp(2j * np.pi * n1 * thickness / np.asarray(wavelength))
    den = 1 + r01 * r12 * ph * ph
    t = t01 * t12 * ph / den
    r = (r01 + r12 * ph * ph) / den
    return r, t


def slab_transmittance(n, k, thickness, wavelength, substrate_n=1.45, superstrate_n=1.0):
    """Power transmittance of superstrate / film (n + ik) / substrate, with
    all multiple reflections.  Vectorised over array arguments."""
    _, t = _film_coefficients(n, k, thickness, wavelength, substrate_n, superstrate_n)
    return np.clip((substrate_n / superstrate_n) * np.abs(t) ** 2, 0.0, 1.0)


def slab_reflectance(n, k, thickness, wavelength, substrate_n=1.45, superstrate_n=1.0):
    r, _ = _film_coefficients(n, k, thickness, wavelength, substrate_n, superstrate_n)
    return np.abs(r) ** 2


def filterbank_from_fill(f: float, disp: MaterialDispersion, stack: StackSpec,
                         wavelengths=None, levels=None) -> np.ndarray:
    """(M, N) transmittance of a film whose GSST fill factor is ``f``."""
    wl = spectral_grid() if wavelengths is None else np.asarray(wavelengths)
    lv = crystal_levels() if levels is None else np.asarray(levels)
    ea, ec = disp.endpoints(wl)
    eps = mix_permittivity(ea[None, :], ec[None, :], lv[:, None])
    eps_film = f * eps + (1.0 - f)
    n, k = permittivity_to_nk(eps_film)
    return slab_transmittance(n, k, stack.thickness, wl[None, :], stack.substrate_n,
                              stack.superstrate_n)


def shape_to_filterbank(shape: ShapeParams, disp: MaterialDispersion | None = None,
                        stack: StackSpec | None = None) -> np.ndarray:
    disp = disp or default_dispersion()
    stack = stack or StackSpec()
    return filterbank_from_fill(fill_factor(shape.polygon()), disp, stack)


# ---------------------------------------------------------------------------
# dataset


def record_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def _make_record(args) -> str:
    seed, index, disp, stack = args
    rng = np.random.default_rng(record_seed(seed, index))
    nv = int(rng.integers(1, 5))
    shape = sample_dataset_shape(rng, nv)
    bank = shape_to_filterbank(shape, disp, stack)
    lines = [shape.to_json()]
    lines += [",".join(repr(float(v)) for v in row) for row in bank]
    return "\n".join(lines) + "\n"


def worker_count() -> int:
    env = os.environ.get("PCMCD_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def generate_dataset(count: int, seed: int, out_path, stack: StackSpec | None = None,
                     disp: MaterialDispersion | None = None, workers: int | None = None) -> Path:
    """Write ``count`` oracle records to ``out_path``; deterministic in ``seed``."""
    if count < 1:
        raise DatasetError("count must be >= 1")
    stack = stack or StackSpec()
    disp = disp or default_dispersion()
    workers = worker_count() if workers is None else workers
    out_path = Path(out_path)
    header = {
        "format": "pcmcd-dataset-1",
        "count": count,
        "seed": seed,
        "N": len(spectral_grid()),
        "M": len(crystal_levels()),
        "stack": asdict(stack),
        "dispersion": disp.digest(),
    }
    jobs = [(seed, i, disp, stack) for i in range(count)]
    try:
        with open(out_path, "w") as fh:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            if workers > 1 and count >= 256:
                with ProcessPoolExecutor(workers) as pool:
                    for rec in pool.map(_make_record, jobs, chunksize=64):
                        fh.write(rec)
            else:
                for job in jobs:
                    fh.write(_make_record(job))
    except OSError as exc:
        raise DatasetError(f"cannot write dataset {out_path}: {exc}") from exc
    return out_path


@dataclass
class Dataset:
    header: dict
    shapes: list
    banks: np.ndarray  # (R, M, N)

    def __len__(self):
        return len(self.shapes)

    def tokens(self) -> np.ndarray:
        return np.stack([s.tokens() for s in self.shapes])

    def split(self, test_fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic train/test index split by hashed record index."""
        idx = np.arange(len(self))
        h = np.array([_index_hash(int(i)) for i in idx])
        test = h < test_fraction
        if test.all() or not test.any():
            # tiny datasets: keep at least one training record
            return idx, idx[:0]
        return idx[~test], idx[test]


def _index_hash(i: int) -> float:
    # splitmix64 finaliser mapped to [0, 1)
    z = (i + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    z ^= z >> 31
    return z / 2.0**64


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    if not lines or not lines[0].startswith("# "):
        raise DatasetError(f"{path}: missing header line")
    header = json.loads(lines[0][2:])
    M = header["M"]
    body = lines[1:]
    if len(body) % (M + 1):
        raise DatasetError(f"{path}: truncated record block")
    shapes, banks = [], []
    for r in range(0, len(body), M + 1):
        shapes.append(ShapeParams.from_json(body[r]))
        banks.append([[float(v) for v in row.split(",")] for row in body[r + 1:r + 1 + M]])
    if not shapes:
        raise DatasetError(f"{path}: dataset is empty")
    return Dataset(header, shapes, np.array(banks))


def write_filterbank(bank: np.ndarray, path) -> Path:
    """CSV with one row per crystallization level."""
    path = Path(path)
    with open(path, "w") as fh:
        for row in np.asarray(bank, dtype=float):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return path


def read_filterbank(path) -> np.ndarray:
    rows = [line for line in Path(path).read_text().splitlines() if line.strip()]
    return np.array([[float(v) for v in line.split(",")] for line in rows])
