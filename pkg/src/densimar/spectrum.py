"""X-ray spectra, mass attenuation tables and the equivalent monochromatic energy.

Both file kinds are two-column CSV (``energy_keV,value``) with ``#`` comments.
Spectrum values may be raw photon counts; they are normalised on load.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


class TableFormatError(ValueError):
    """A spectrum or MAC file could not be parsed."""


class EnergyRangeError(ValueError):
    """An energy lies outside a tabulated range."""


@dataclass(frozen=True, eq=False)
class Spectrum:
    energies: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if e.ndim != 1 or e.shape != w.shape or e.size < 1:
            raise ValueError("energies and weights must be 1-D arrays of equal, non-zero length")
        if np.any(np.diff(e) <= 0):
            raise ValueError("energies must be strictly increasing")
        if np.any(w < 0):
            raise ValueError("spectrum weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"spectrum weights sum to {w.sum()!r}, expected 1")
        e.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "weights", w)

    @property
    def n_bins(self) -> int:
        return self.energies.size

    @classmethod
    def from_counts(cls, energies, counts) -> "Spectrum":
        counts = np.asarray(counts, dtype=np.float64)
        if np.any(counts < 0):
            raise ValueError("photon counts must be non-negative")
        total = counts.sum()
        if not total > 0:
            raise ValueError("spectrum has no photons")
        return cls(energies, counts / total)

    def sha256(self) -> bytes:
        """Digest of the little-endian float64 energies followed by weights."""
        h = hashlib.sha256()
        h.update(self.energies.astype("<f8").tobytes())
        h.update(self.weights.astype("<f8").tobytes())
        return h.digest()


@dataclass(frozen=True, eq=False)
class MacTable:
    material_name: str
    energies: np.ndarray
    mac_values: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=np.float64)
        g = np.asarray(self.mac_values, dtype=np.float64)
        if e.ndim != 1 or e.shape != g.shape or e.size < 1:
            raise ValueError("energies and mac_values must be 1-D arrays of equal length")
        if np.any(np.diff(e) <= 0):
            raise ValueError("energies must be strictly increasing")
        if np.any(g <= 0):
            raise ValueError("mass attenuation coefficients must be positive")
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "mac_values", g)

    def __call__(self, energy):
        return interp_mac(self, energy)


def read_two_column(path) -> tuple[np.ndarray, np.ndarray]:
    energies, values = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise TableFormatError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
            try:
                e, v = float(parts[0]), float(parts[1])
            except ValueError:
                raise TableFormatError(f"{path}:{lineno}: non-numeric value") from None
            if not (math.isfinite(e) and math.isfinite(v)):
                raise TableFormatError(f"{path}:{lineno}: non-finite value")
            if energies and e <= energies[-1]:
                raise TableFormatError(f"{path}:{lineno}: energies must be strictly increasing")
            energies.append(e)
            values.append(v)
    if not energies:
        raise TableFormatError(f"{path}: no data rows")
    return np.array(energies), np.array(values)


def load_spectrum(path) -> Spectrum:
    energies, counts = read_two_column(path)
    if np.any(counts < 0):
        raise TableFormatError(f"{path}: negative photon count")
    if not counts.sum() > 0:
        raise TableFormatError(f"{path}: spectrum has no photons")
    if abs(counts.sum() - 1.0) <= 1e-9:
        # already normalised; keep the stored bits so the digest survives a save/load cycle
        return Spectrum(energies, counts)
    return Spectrum.from_counts(energies, counts)


def save_spectrum(spectrum: Spectrum, path) -> None:
    with open(path, "w") as fh:
        fh.write("# energy_keV,weight\n")
        for e, w in zip(spectrum.energies, spectrum.weights):
            fh.write(f"{float(e)!r},{float(w)!r}\n")


def load_mac(path, material_name=None) -> MacTable:
    energies, values = read_two_column(path)
    if np.any(values <= 0):
        raise TableFormatError(f"{path}: mass attenuation coefficients must be positive")
    name = material_name or Path(path).stem
    return MacTable(name, energies, values)


def _data_file(*parts) -> Path:
    return Path(str(resources.files("densimar").joinpath("data", *parts)))


def bundled_spectrum(name: str = "tungsten_120kvp") -> Spectrum:
    return load_spectrum(_data_file("spectra", f"{name}.csv"))


def bundled_mac(material: str) -> MacTable:
    path = _data_file("mac", f"{material}.csv")
    if not path.exists():
        raise KeyError(f"no bundled MAC table for {material!r}")
    return load_mac(path, material)


def interp_mac(table: MacTable, energy):
    """Log-log interpolation of a MAC table at ``energy`` (keV, scalar or array)."""
    e = np.asarray(energy, dtype=np.float64)
    lo, hi = table.energies[0], table.energies[-1]
    if np.any(e < lo) or np.any(e > hi) or np.any(~np.isfinite(e)):
        raise EnergyRangeError(f"energy outside MAC table range [{lo}, {hi}] keV "
                               f"for {table.material_name}")
    out = np.exp(np.interp(np.log(e), np.log(table.energies), np.log(table.mac_values)))
    return float(out) if out.ndim == 0 else out


def _source_edges(energies: np.ndarray) -> np.ndarray:
    mid = 0.5 * (energies[1:] + energies[:-1])
    first = energies[0] - (mid[0] - energies[0])
    last = energies[-1] + (energies[-1] - mid[-1])
    return np.concatenate([[first], mid, [last]])


def resample_spectrum(s: Spectrum, n: int, e_min: float, e_max: float) -> Spectrum:
    """Rebin ``s`` onto ``n`` uniform bins spanning ``[e_min, e_max]``.

    Each source bin's photons are spread uniformly over the source bin and
    redistributed by overlap, i.e. the cumulative photon curve is linearly
    interpolated and differenced at the new bin edges. Photons outside the
    target range are discarded before renormalisation. New energies are the
    bin centres.
    """
    if n < 1:
        raise ValueError("number of bins must be >= 1")
    if not e_min < e_max:
        raise ValueError("e_min must be smaller than e_max")
    edges = np.linspace(e_min, e_max, n + 1)
    centres = 0.5 * (edges[1:] + edges[:-1])
    if s.n_bins == 1:
        w = np.zeros(n)
        e0 = s.energies[0]
        if e_min <= e0 <= e_max:
            w[min(int(np.searchsorted(edges, e0, side="right")) - 1, n - 1)] = 1.0
    else:
        src_edges = _source_edges(s.energies)
        cdf = np.concatenate([[0.0], np.cumsum(s.weights)])
        w = np.diff(np.interp(edges, src_edges, cdf))
        w = np.clip(w, 0.0, None)
    if not w.sum() > 0:
        raise ValueError(f"spectrum has no photons inside [{e_min}, {e_max}] keV")
    return Spectrum(centres, w / w.sum())


def equivalent_energy(s: Spectrum) -> int:
    """Spectrum-weighted mean energy, floored to whole keV.

    A relative guard of 1e-12 keeps exact integers (e.g. 70.0 computed as
    69.99999999999999) from flooring one keV low.
    """
    mean = float(np.dot(s.weights, s.energies))
    return int(math.floor(mean * (1.0 + 1e-12)))


def noisy_spectrum(s: Spectrum, level: float, rng: np.random.Generator) -> Spectrum:
    """Add N(0, level * max(eta)) to every bin, clip at zero and renormalise."""
    w = s.weights + rng.normal(0.0, level * s.weights.max(), size=s.n_bins)
    return Spectrum.from_counts(s.energies, np.clip(w, 0.0, None))


def random_spectrum(energies, rng: np.random.Generator) -> Spectrum:
    """|N(0, 1)| draws on the given energy grid, normalised."""
    energies = np.asarray(energies, dtype=np.float64)
    return Spectrum.from_counts(energies, np.abs(rng.normal(size=energies.size)))
