"""Coordinate network mapping 2-D positions to density.

A multiresolution hash-grid encoder feeds a two-layer perceptron::

    features = concat_l bilerp(table_l, x * N_l)          (L * F values)
    hidden   = relu(features @ w1 + b1)                     (width H)
    sigma    = elu(hidden @ w2 + b2)                        (scalar)

Coarse levels whose full lattice fits in ``table_size`` entries are indexed
densely; finer levels use the spatial hash ``(i * 1) ^ (j * 2654435761)``
modulo the table size. Everything is plain numpy with explicit reverse-mode
gradients; parameters may be float32 (training) or float64 (gradient checks).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

HASH_PRIMES = (1, 2654435761)
DNRF_MAGIC = b"DNRF"
DNRF_VERSION = 1
_DNRF_HEADER = struct.Struct("<4sH IIII d I d")


@dataclass(frozen=True)
class HashEncoderConfig:
    n_levels: int = 16
    table_size: int = 2 ** 19
    features_per_entry: int = 8
    base_resolution: int = 2
    growth_factor: float = 2.0

    def __post_init__(self):
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if self.table_size < 1 or self.table_size & (self.table_size - 1):
            raise ValueError("table_size must be a power of two")
        if self.features_per_entry < 1 or self.base_resolution < 1:
            raise ValueError("features_per_entry and base_resolution must be >= 1")
        if not self.growth_factor > 1:
            raise ValueError("growth_factor must exceed 1")

    @property
    def output_dim(self) -> int:
        return self.n_levels * self.features_per_entry

    def resolutions(self) -> np.ndarray:
        return np.array([math.floor(self.base_resolution * self.growth_factor ** level)
                         for level in range(self.n_levels)], dtype=np.int64)

    def level_sizes(self) -> np.ndarray:
        return np.minimum((self.resolutions() + 1) ** 2, self.table_size)

    def dense_levels(self) -> np.ndarray:
        return (self.resolutions() + 1) ** 2 <= self.table_size

    def level_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.level_sizes())])

    @property
    def n_entries(self) -> int:
        return int(self.level_sizes().sum())


@dataclass(frozen=True)
class MlpConfig:
    hidden_width: int = 128

    def __post_init__(self):
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1")


@dataclass(eq=False)
class FieldParams:
    encoder: HashEncoderConfig
    mlp: MlpConfig
    tables: np.ndarray  # (n_entries, F)
    w1: np.ndarray  # (L*F, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H,)
    b2: np.ndarray  # (1,)

    NAMES = ("tables", "w1", "b1", "w2", "b2")

    @classmethod
    def initialize(cls, encoder: HashEncoderConfig, mlp: MlpConfig, rng: np.random.Generator,
                   dtype=np.float32) -> "FieldParams":
        """Tables ~ U(-1e-4, 1e-4); weights Kaiming-uniform on fan-in; zero biases."""
        d_in, h = encoder.output_dim, mlp.hidden_width
        tables = rng.uniform(-1e-4, 1e-4, size=(encoder.n_entries, encoder.features_per_entry))
        w1 = rng.uniform(-1.0, 1.0, size=(d_in, h)) * math.sqrt(6.0 / d_in)
        w2 = rng.uniform(-1.0, 1.0, size=h) * math.sqrt(6.0 / h)
        return cls(encoder, mlp, tables.astype(dtype), w1.astype(dtype), np.zeros(h, dtype),
                   w2.astype(dtype), np.zeros(1, dtype))

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in self.NAMES]

    def replace_arrays(self, arrays) -> "FieldParams":
        return FieldParams(self.encoder, self.mlp, *arrays)

    def copy(self, dtype=None) -> "FieldParams":
        return self.replace_arrays([a.astype(dtype or a.dtype, copy=True) for a in self.arrays()])

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


def _corner_slots(cfg: HashEncoderConfig, cell_i, cell_j):
    """Table rows of the four lattice corners of each cell, shape (n, L, 4)."""
    res = cfg.resolutions()
    dense = cfg.dense_levels()
    offsets = cfg.level_offsets()[:-1]
    ci = cell_i[..., None] + np.array([0, 1, 0, 1])
    cj = cell_j[..., None] + np.array([0, 0, 1, 1])
    dense_slot = ci + cj * (res + 1)[None, :, None]
    hashed_slot = (ci * HASH_PRIMES[0]) ^ (cj * HASH_PRIMES[1])
    hashed_slot &= cfg.table_size - 1
    slot = np.where(dense[None, :, None], dense_slot, hashed_slot)
    return slot + offsets[None, :, None]


def encode(x, cfg: HashEncoderConfig, tables, return_cache: bool = False):
    """Hash-grid features for points in the unit square.

    Points outside ``[0, 1]^2`` are clamped onto it.

    Returns
    -------
    features : ndarray, shape (n, L * F)
    cache : tuple, only if ``return_cache``
        Corner rows and bilinear weights, both (n, L, 4), for :func:`encode_backward`.
    """
    x = np.clip(np.asarray(x, dtype=tables.dtype).reshape(-1, 2), 0.0, 1.0)
    res = cfg.resolutions()
    pos = x[:, None, :] * res[None, :, None].astype(tables.dtype)
    cell = np.minimum(np.floor(pos).astype(np.int64), (res - 1)[None, :, None])
    frac = pos - cell
    fx, fy = frac[..., 0], frac[..., 1]
    weights = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    rows = _corner_slots(cfg, cell[..., 0], cell[..., 1])
    feats = np.einsum("nlc,nlcf->nlf", weights, tables[rows])
    feats = feats.reshape(len(x), cfg.output_dim)
    if return_cache:
        return feats, (rows, weights)
    return feats


def _scatter_rows(rows, values, n_rows):
    """Sum ``values[k]`` into row ``rows[k]`` of an ``(n_rows, F)`` array."""
    n_feat = values.shape[-1]
    out = np.zeros((n_rows, n_feat), dtype=values.dtype)
    if rows.size == 0:
        return out
    if n_rows * n_feat <= 1 << 22:
        flat = (rows[:, None] * n_feat + np.arange(n_feat)).ravel()
        out[:] = np.bincount(flat, values.ravel(), minlength=n_rows * n_feat).reshape(n_rows, n_feat)
        return out
    uniq, inverse = np.unique(rows, return_inverse=True)
    for f in range(n_feat):
        out[uniq, f] = np.bincount(inverse, values[:, f], minlength=len(uniq))
    return out


def encode_backward(cache, d_features, cfg: HashEncoderConfig, n_entries: int):
    """Gradient of the features w.r.t. the table entries (dense, zero where untouched)."""
    rows, weights = cache
    d = d_features.reshape(len(rows), cfg.n_levels, 1, cfg.features_per_entry)
    contrib = weights[..., None] * d  # (n, L, 4, F)
    return _scatter_rows(rows.ravel(), contrib.reshape(-1, cfg.features_per_entry), n_entries)


def normalize_points(points, half_width: float):
    """Map physical coordinates in ``[-h, h]^2`` (mm) onto the unit square."""
    return (np.asarray(points, dtype=np.float64) + half_width) / (2.0 * half_width)


def _elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0)))


def field_forward(points, params: FieldParams, half_width: float):
    """Raw network output at physical points, plus the cache for backprop."""
    x = normalize_points(points, half_width)
    feats, enc_cache = encode(x, params.encoder, params.tables, return_cache=True)
    pre = feats @ params.w1 + params.b1
    hidden = np.maximum(pre, 0)
    z = hidden @ params.w2 + params.b2[0]
    sigma = _elu(z)
    return sigma, (enc_cache, feats, pre, hidden, z)


def field_eval(points, params: FieldParams, half_width: float, batch: int = 65536):
    """Raw density (g/cm^3, may be negative) at physical points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    out = np.empty(len(pts), dtype=params.w1.dtype)
    for start in range(0, len(pts), batch):
        out[start:start + batch] = field_forward(pts[start:start + batch], params, half_width)[0]
    return out


def field_backward(cache, upstream, params: FieldParams) -> list[np.ndarray]:
    """Parameter gradients given dL/dsigma for every cached sample.

    Returned in :attr:`FieldParams.NAMES` order.
    """
    enc_cache, feats, pre, hidden, z = cache
    dtype = params.w1.dtype
    dz = np.asarray(upstream, dtype=dtype) * np.where(z > 0, 1.0, np.exp(np.minimum(z, 0))).astype(dtype)
    g_w2 = hidden.T @ dz
    g_b2 = np.array([dz.sum(dtype=np.float64)], dtype=dtype)
    d_pre = np.multiply.outer(dz, params.w2) * (pre > 0)
    g_w1 = feats.T @ d_pre
    g_b1 = d_pre.sum(axis=0, dtype=np.float64).astype(dtype)
    d_feats = d_pre @ params.w1.T
    g_tables = encode_backward(enc_cache, d_feats, params.encoder, params.tables.shape[0])
    return [g_tables, g_w1, g_b1, g_w2, g_b2]


def write_checkpoint(path, params: FieldParams, half_width: float) -> None:
    e = params.encoder
    with open(path, "wb") as fh:
        fh.write(_DNRF_HEADER.pack(DNRF_MAGIC, DNRF_VERSION, e.n_levels, e.table_size,
                                   e.features_per_entry, e.base_resolution, e.growth_factor,
                                   params.mlp.hidden_width, half_width))
        for a in params.arrays():
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_checkpoint(path) -> tuple[FieldParams, float]:
    """Load parameters (as float32) and the domain half width in mm."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _DNRF_HEADER.size:
        raise ValueError(f"{path}: truncated DNRF header")
    magic, version, n_levels, table_size, n_feat, base, growth, width, half_width = \
        _DNRF_HEADER.unpack_from(raw)
    if magic != DNRF_MAGIC:
        raise ValueError(f"{path}: not a DNRF checkpoint")
    if version != DNRF_VERSION:
        raise ValueError(f"{path}: unsupported DNRF version {version}")
    enc = HashEncoderConfig(n_levels, table_size, n_feat, base, growth)
    mlp = MlpConfig(width)
    shapes = [(enc.n_entries, n_feat), (enc.output_dim, width), (width,), (width,), (1,)]
    arrays, pos = [], _DNRF_HEADER.size
    for shape in shapes:
        n = math.prod(shape)
        if pos + 4 * n > len(raw):
            raise ValueError(f"{path}: truncated parameter block")
        arrays.append(np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32))
        pos += 4 * n
    if pos != len(raw):
        raise ValueError(f"{path}: trailing bytes after parameters")
    return FieldParams(enc, mlp, *arrays), half_width
