"""Fit the density field to measured sinograms."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .field import FieldParams, HashEncoderConfig, MlpConfig, field_backward, field_forward
from .forward import MaterialContext, forward_batch
from .geometry import fan_rays, sample_bundle
from .grid import GridSpec, MetalMask, lookup_mask
from .sinogram import Sinogram

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration, ray_ids):
        self.iteration = iteration
        self.ray_ids = np.asarray(ray_ids)
        super().__init__(f"non-finite loss at iteration {iteration}; rays {self.ray_ids.tolist()}")


@dataclass(frozen=True)
class TrainConfig:
    rays_per_iter: int = 80
    epochs: int = 2000
    lr0: float = 1e-3
    lr_halving_period: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    encoder: HashEncoderConfig = HashEncoderConfig()
    mlp: MlpConfig = MlpConfig()
    delta_x: float = 0.5

    def __post_init__(self):
        if self.rays_per_iter < 1 or self.epochs < 0 or self.lr_halving_period < 1:
            raise ValueError("rays_per_iter and lr_halving_period must be positive, epochs >= 0")
        if not self.lr0 > 0 or not self.eps > 0 or not self.delta_x > 0:
            raise ValueError("lr0, eps and delta_x must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")

    def learning_rate(self, epoch: int) -> float:
        return self.lr0 * 2.0 ** -(epoch // self.lr_halving_period)


@dataclass
class LossRecord:
    iteration: int
    epoch: int
    lr: float
    loss: float


@dataclass(eq=False)
class TrainState:
    params: FieldParams
    m: list
    v: list
    iteration: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, params: FieldParams) -> "TrainState":
        zeros = [np.zeros_like(a) for a in params.arrays()]
        return cls(params, zeros, [z.copy() for z in zeros])


def loss_dc(pred, meas):
    """Mean absolute error and its (sub)gradient w.r.t. ``pred`` (0 at ties)."""
    pred = np.asarray(pred, dtype=np.float64)
    meas = np.asarray(meas, dtype=np.float64)
    if pred.shape != meas.shape:
        raise ValueError("prediction and measurement batches differ in length")
    if pred.size == 0:
        raise ValueError("empty ray batch")
    diff = pred - meas
    return float(np.abs(diff).mean()), np.sign(diff) / pred.size


def adam_step(state: TrainState, grads, lr: float, cfg: TrainConfig) -> None:
    state.iteration += 1
    t = state.iteration
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for p, g, m, v in zip(state.params.arrays(), grads, state.m, state.v):
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g * g
        p -= (lr / c1) * m / (np.sqrt(v / c2) + cfg.eps)


@dataclass
class RayCache:
    """Per-ray samples (unit-square coordinates not yet applied) and mask flags."""

    points: np.ndarray
    is_metal: np.ndarray
    offsets: np.ndarray
    delta_x: float

    @classmethod
    def build(cls, sino: Sinogram, mask: MetalMask, delta_x: float, dtype=np.float32) -> "RayCache":
        o, d, t0, t1 = fan_rays(sino.geometry)
        rs = sample_bundle(o, d, t0, t1, delta_x)
        return cls(rs.points.astype(dtype), lookup_mask(mask, rs.points).astype(bool), rs.offsets, delta_x)

    def gather(self, ray_ids):
        starts = self.offsets[ray_ids]
        counts = self.offsets[ray_ids + 1] - starts
        local = np.repeat(np.arange(len(ray_ids)), counts)
        within = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        idx = starts[local] + within
        return self.points[idx], self.is_metal[idx], local


def ray_loss_and_grads(params, cache: RayCache, ray_ids, targets, ctx: MaterialContext, half_width):
    """Loss on a batch of rays and gradients for every parameter array."""
    points, metal, local = cache.gather(ray_ids)
    sigma, fcache = field_forward(points, params, half_width)
    pred, dp_dsigma = forward_batch(sigma, metal, local, len(ray_ids), cache.delta_x, ctx)
    loss, dl_dp = loss_dc(pred, targets)
    upstream = dl_dp[local] * dp_dsigma
    return loss, pred, field_backward(fcache, upstream, params)


def _fused_loss_and_grads(fused, cache: RayCache, ray_ids, targets, ctx: MaterialContext):
    points, metal, local = cache.gather(ray_ids)
    sigma, fcache = fused.forward(points)
    pred, dp_dsigma = forward_batch(sigma, metal, local, len(ray_ids), cache.delta_x, ctx)
    loss, dl_dp = loss_dc(pred, targets)
    return loss, pred, fused.backward(fcache, dl_dp[local] * dp_dsigma)


def train(sino: Sinogram, mask: MetalMask, ctx: MaterialContext, cfg: TrainConfig,
          params: FieldParams | None = None, callback=None, backend: str = "auto") -> TrainState:
    """Optimise the field so the forward model reproduces ``sino``.

    Every epoch visits all rays once in a fresh random order, ``rays_per_iter``
    at a time (the final batch of an epoch may be smaller). ``callback`` is
    invoked as ``callback(epoch, state)`` after each epoch.

    ``backend`` is ``"numpy"``, ``"fused"`` (compiled kernels, float32
    parameters only) or ``"auto"``, which picks the fused path when it applies.
    """
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = FieldParams.initialize(cfg.encoder, cfg.mlp, rng)
    state = TrainState.fresh(params)
    half_width = sino.geometry.fov_half_width
    cache = RayCache.build(sino, mask, cfg.delta_x, params.w1.dtype)
    meas = sino.values.ravel()
    n_rays = meas.size
    if backend == "auto":
        backend = "fused" if params.w1.dtype == np.float32 else "numpy"
    if backend == "fused":
        from . import _fused
        fused = _fused.FusedField(state.params, half_width)
    elif backend != "numpy":
        raise ValueError(f"unknown backend {backend!r}")
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate(epoch)
        order = rng.permutation(n_rays)
        for start in range(0, n_rays, cfg.rays_per_iter):
            ray_ids = order[start:start + cfg.rays_per_iter]
            if backend == "fused":
                loss, _, grads = _fused_loss_and_grads(fused, cache, ray_ids, meas[ray_ids], ctx)
            else:
                loss, _, grads = ray_loss_and_grads(state.params, cache, ray_ids, meas[ray_ids], ctx, half_width)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDiverged(state.iteration, ray_ids)
            if backend == "fused":
                state.iteration += 1
                for p, g, m, v in zip(state.params.arrays(), grads, state.m, state.v):
                    _fused.adam_update(p, g, m, v, lr, cfg.beta1, cfg.beta2, state.iteration, cfg.eps)
            else:
                adam_step(state, grads, lr, cfg)
            state.history.append(LossRecord(state.iteration, epoch, lr, loss))
        if callback is not None:
            callback(epoch, state)
        if epoch % 50 == 0 or epoch == cfg.epochs - 1:
            log.debug("epoch %d lr %.3g loss %.5f", epoch, lr, state.history[-1].loss)
    return state


def write_loss_history(path, history) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,epoch,lr,loss\n")
        for r in history:
            fh.write(f"{r.iteration},{r.epoch},{r.lr!r},{r.loss!r}\n")


def estimate_metal_mask(fbp_lac, ctx: MaterialContext, min_pixels: int = 4, dilate: int = 1) -> MetalMask:
    """Threshold an FBP image at twice the water LAC at E*, drop specks, dilate."""
    from .spectrum import interp_mac

    threshold = 2.0 * interp_mac(ctx.water, ctx.equivalent_energy)
    binary = fbp_lac.values > threshold
    labels, n = ndimage.label(binary)
    if n:
        sizes = ndimage.sum(binary, labels, index=np.arange(1, n + 1))
        binary = np.isin(labels, 1 + np.flatnonzero(sizes >= min_pixels))
    if dilate > 0 and binary.any():
        binary = ndimage.binary_dilation(binary, iterations=dilate)
    return MetalMask(binary.astype(np.uint8), fbp_lac.pixel_size)


def default_mask_spec(sino: Sinogram, pixel_size: float = 1.0) -> GridSpec:
    n = int(round(2 * sino.geometry.fov_half_width / pixel_size))
    return GridSpec(n, n, pixel_size)
