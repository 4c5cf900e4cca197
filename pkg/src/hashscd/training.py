"""Unsupervised training of the hash head.

Each batch item is one source image seen through two independent random
augmentations (the "time T0" anchor and "time T1" positive); every other
item's two views act as negatives, so an item in a batch of N faces
2(N-1) negatives. The loss is a temperature-scaled softmax cross entropy
on raw inner products of the symmetric relaxed codes, applied at every
patch position and on the symmetric-mapped global aggregate, averaged over
the P+1 terms. Gradients are computed analytically (tanh, the
absolute-difference fold with subgradient 0 at ties, the softmax) and the
weights are updated with Adam.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import InvalidInputError
from .features import DESCRIPTOR_DIM, compute_feature_map
from .model import ModelParams, init_params

__all__ = [
    "KNOWN_TRANSFORMS",
    "AugmentationConfig",
    "ContrastiveBatch",
    "TrainConfig",
    "AdamState",
    "augment",
    "build_batch",
    "contrastive_loss",
    "total_loss",
    "grad_total_loss",
    "loss_and_grad",
    "adam_step",
    "train",
]

logger = logging.getLogger(__name__)

KNOWN_TRANSFORMS = (
    "rotate",
    "random-resized-crop",
    "color-jitter",
    "gaussian-noise",
    "gaussian-blur",
    "salt-and-pepper",
    "to-gray",
)

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentationConfig:
    """Enabled photometric/geometric transforms and their parameter ranges.

    Every enabled transform is applied on each draw, with its parameters
    sampled from the configured range; disabled transforms draw nothing, so
    outputs stay deterministic per (config, draw_seed).
    """

    transforms: tuple[str, ...] = (
        "rotate",
        "random-resized-crop",
        "color-jitter",
        "gaussian-noise",
    )
    rotate_degrees: float = 5.0  # max |angle|; must stay within +/-30
    crop_scale: tuple[float, float] = (0.8, 1.0)  # retained area fraction
    crop_ratio: tuple[float, float] = (0.9, 1.1)  # aspect jitter
    jitter_strength: float = 0.2  # brightness/contrast/saturation amplitude
    noise_sigma: float = 6.0  # gaussian noise std, 8-bit units
    blur_sigma: tuple[float, float] = (0.3, 1.2)
    salt_pepper_fraction: float = 0.01
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.transforms) - set(KNOWN_TRANSFORMS)
        if unknown:
            raise InvalidInputError(f"unknown transforms: {sorted(unknown)}")
        if not 0.0 <= self.rotate_degrees <= 30.0:
            raise InvalidInputError("rotate_degrees must be within [0, 30]")
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise InvalidInputError("crop_scale must satisfy 0 < lo <= hi <= 1")
        rlo, rhi = self.crop_ratio
        if not (0.0 < rlo <= rhi):
            raise InvalidInputError("crop_ratio must be positive and ordered")
        if self.jitter_strength < 0 or self.jitter_strength >= 1:
            raise InvalidInputError("jitter_strength must be in [0, 1)")
        if self.noise_sigma < 0:
            raise InvalidInputError("noise_sigma must be >= 0")
        blo, bhi = self.blur_sigma
        if not (0.0 <= blo <= bhi):
            raise InvalidInputError("blur_sigma must be ordered and >= 0")
        if not 0.0 <= self.salt_pepper_fraction <= 1.0:
            raise InvalidInputError("salt_pepper_fraction must be in [0, 1]")


def _to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def _resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    pil = Image.fromarray(img, mode="RGB")
    return np.asarray(pil.resize((width, height), Image.BILINEAR), dtype=np.uint8)


def augment(img: np.ndarray, cfg: AugmentationConfig, draw_seed: int) -> np.ndarray:
    """One random view of the image; same (img, cfg, draw_seed) gives the same view.

    Output dimensions always match the input: rotation fills by edge
    replication, crops are resampled back to full size bilinearly.
    """
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise InvalidInputError("expected (H, W, 3) uint8 image")
    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFF, draw_seed & 0xFFFFFFFFFFFF])
    h, w = arr.shape[:2]
    out = arr

    if "rotate" in cfg.transforms:
        angle = rng.uniform(-cfg.rotate_degrees, cfg.rotate_degrees)
        rotated = ndimage.rotate(
            out.astype(np.float64), angle, axes=(1, 0), reshape=False,
            order=1, mode="nearest",
        )
        out = _to_uint8(rotated)

    if "random-resized-crop" in cfg.transforms:
        scale = rng.uniform(*cfg.crop_scale)
        ratio = np.exp(rng.uniform(np.log(cfg.crop_ratio[0]), np.log(cfg.crop_ratio[1])))
        area = scale * h * w
        crop_h = int(round(np.sqrt(area / ratio)))
        crop_w = int(round(np.sqrt(area * ratio)))
        crop_h = min(max(crop_h, 1), h)
        crop_w = min(max(crop_w, 1), w)
        top = int(rng.integers(0, h - crop_h + 1))
        left = int(rng.integers(0, w - crop_w + 1))
        cropped = out[top : top + crop_h, left : left + crop_w]
        out = _resize_bilinear(cropped, h, w)

    if "color-jitter" in cfg.transforms:
        s = cfg.jitter_strength
        brightness = 1.0 + rng.uniform(-s, s)
        contrast = 1.0 + rng.uniform(-s, s)
        saturation = 1.0 + rng.uniform(-s, s)
        x = out.astype(np.float64) * brightness
        mean = x.mean()
        x = (x - mean) * contrast + mean
        gray = (x @ _LUMA)[..., np.newaxis]
        x = gray + (x - gray) * saturation
        out = _to_uint8(x)

    if "gaussian-noise" in cfg.transforms:
        noise = rng.normal(0.0, cfg.noise_sigma, size=out.shape)
        out = _to_uint8(out.astype(np.float64) + noise)

    if "gaussian-blur" in cfg.transforms:
        sigma = rng.uniform(*cfg.blur_sigma)
        blurred = ndimage.gaussian_filter(
            out.astype(np.float64), sigma=(sigma, sigma, 0.0)
        )
        out = _to_uint8(blurred)

    if "salt-and-pepper" in cfg.transforms:
        n = int(round(cfg.salt_pepper_fraction * h * w))
        if n > 0:
            ys = rng.integers(0, h, size=n)
            xs = rng.integers(0, w, size=n)
            values = np.where(rng.random(n) < 0.5, 0, 255).astype(np.uint8)
            out = out.copy()
            out[ys, xs] = values[:, np.newaxis]

    if "to-gray" in cfg.transforms:
        gray = _to_uint8(out.astype(np.float64) @ _LUMA)
        out = np.repeat(gray[:, :, np.newaxis], 3, axis=2)

    return out


@dataclass(frozen=True)
class ContrastiveBatch:
    """Anchor and positive feature maps for N items, shapes (N, C, H, W)."""

    anchors: np.ndarray
    positives: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.anchors, dtype=np.float64)
        p = np.asarray(self.positives, dtype=np.float64)
        if a.ndim != 4 or a.shape != p.shape:
            raise InvalidInputError(
                f"anchors/positives must share an (N, C, H, W) shape, got {a.shape} vs {p.shape}"
            )
        if a.shape[0] < 2:
            raise InvalidInputError("a contrastive batch needs at least 2 items")
        if not (np.isfinite(a).all() and np.isfinite(p).all()):
            raise InvalidInputError("feature maps contain non-finite values")
        object.__setattr__(self, "anchors", a)
        object.__setattr__(self, "positives", p)

    @property
    def n_items(self) -> int:
        return self.anchors.shape[0]

    @property
    def n_patches(self) -> int:
        return self.anchors.shape[2] * self.anchors.shape[3]


def build_batch(
    images,
    cfg: AugmentationConfig,
    epoch_seed: int,
    grid_h: int,
    grid_w: int,
) -> ContrastiveBatch:
    """Augment each source twice and extract both feature maps.

    Negatives need no explicit field: for item k they are the anchor and
    positive views of the other N-1 items.
    """
    sources = list(images)
    if len(sources) < 2:
        raise InvalidInputError("need at least 2 source images per batch")
    anchors, positives = [], []
    for k, img in enumerate(sources):
        base = epoch_seed * 2_000_003 + 2 * k
        view_a = augment(img, cfg, draw_seed=base)
        view_p = augment(img, cfg, draw_seed=base + 1)
        anchors.append(compute_feature_map(view_a, grid_h, grid_w))
        positives.append(compute_feature_map(view_p, grid_h, grid_w))
    return ContrastiveBatch(np.stack(anchors), np.stack(positives))


def contrastive_loss(u_a, u_p, negatives, tau: float) -> float:
    """Softmax cross entropy on raw inner products against the anchor.

    With no negatives the numerator equals the denominator and the loss is
    exactly zero (a degenerate case, flagged in the log).
    """
    if tau <= 0:
        raise InvalidInputError("temperature must be positive")
    ua = np.asarray(u_a, dtype=np.float64)
    up = np.asarray(u_p, dtype=np.float64)
    if ua.shape != up.shape or ua.ndim != 1:
        raise InvalidInputError("anchor and positive must be equal-length vectors")
    negs = [np.asarray(n, dtype=np.float64) for n in negatives]
    if any(n.shape != ua.shape for n in negs):
        raise InvalidInputError("negatives must match the anchor length")
    if not negs:
        logger.warning("contrastive loss with no negatives is degenerate (always 0)")
    z_pos = float(ua @ up) / tau
    logits = np.array([z_pos] + [float(ua @ n) / tau for n in negs])
    zmax = logits.max()
    lse = zmax + np.log(np.exp(logits - zmax).sum())
    return float(lse - z_pos)


def _forward_views(params: ModelParams, batch: ContrastiveBatch):
    """Stack both views of every item and run the head over all patches.

    Views are interleaved: index 2k is item k's anchor, 2k+1 its positive.
    Returns (features, tanh codes, fold accumulators, symmetric globals).
    """
    n, c, gh, gw = batch.anchors.shape
    p = gh * gw
    feats = np.empty((2 * n, c, p))
    feats[0::2] = batch.anchors.reshape(n, c, p)
    feats[1::2] = batch.positives.reshape(n, c, p)
    v = np.matmul(params.weights, feats)  # (2N, l, P)
    u = np.tanh(v)
    h = (u + 1.0) / 2.0
    acc = np.empty_like(h)
    acc[:, :, 0] = h[:, :, 0]
    for j in range(1, p):
        acc[:, :, j] = np.abs(h[:, :, j] - acc[:, :, j - 1])
    g = 2.0 * acc[:, :, -1] - 1.0
    return feats, u, h, acc, g


def _level_terms(codes: np.ndarray, tau: float, scale: float, grad_out=None) -> float:
    """Sum of the N anchor-vs-rest softmax terms over one code matrix (2N, l).

    When ``grad_out`` is given, accumulates d(loss)/d(codes) into it.
    """
    n_views = codes.shape[0]
    gram = codes @ codes.T
    total = 0.0
    for k in range(n_views // 2):
        a, pos = 2 * k, 2 * k + 1
        z = gram[a] / tau
        mask = np.ones(n_views, dtype=bool)
        mask[a] = False
        logits = z[mask]
        zmax = logits.max()
        expz = np.exp(logits - zmax)
        lse = zmax + np.log(expz.sum())
        total += scale * (lse - z[pos])
        if grad_out is not None:
            coeff = np.zeros(n_views)
            coeff[mask] = expz / expz.sum()
            coeff[pos] -= 1.0
            grad_out[a] += (scale / tau) * (coeff @ codes)
            grad_out += np.outer(coeff, (scale / tau) * codes[a])
    return total


def _batch_loss(params: ModelParams, batch: ContrastiveBatch, tau: float, want_grad: bool):
    if tau <= 0:
        raise InvalidInputError("temperature must be positive")
    if params.feature_dim != batch.anchors.shape[1]:
        raise InvalidInputError(
            f"head expects {params.feature_dim} channels, batch has {batch.anchors.shape[1]}"
        )
    feats, u, h, acc, g = _forward_views(params, batch)
    n = batch.n_items
    p = batch.n_patches
    scale = 1.0 / (n * (p + 1))

    d_u = np.zeros_like(u) if want_grad else None
    d_g = np.zeros_like(g) if want_grad else None

    total = _level_terms(g, tau, scale, d_g)
    for i in range(p):
        d_slice = d_u[:, :, i] if want_grad else None
        total += _level_terms(u[:, :, i], tau, scale, d_slice)

    if not want_grad:
        return total, None, 0

    # Backprop the global contribution through 2R-1 and the fold; a sign of
    # exactly zero (an absolute-value tie) contributes subgradient 0 and
    # blocks flow to earlier patches on that component.
    signs = np.sign(h[:, :, 1:] - acc[:, :, :-1])
    tie_count = int((signs == 0.0).sum()) if p > 1 else 0
    d_h = np.zeros_like(h)
    carry = 2.0 * d_g
    for j in range(p - 1, 0, -1):
        d_h[:, :, j] += carry * signs[:, :, j - 1]
        carry = -carry * signs[:, :, j - 1]
    d_h[:, :, 0] += carry
    d_u += 0.5 * d_h
    d_v = d_u * (1.0 - u * u)
    grad = np.einsum("tlp,tcp->lc", d_v, feats)
    if tie_count:
        logger.debug("absolute-difference ties encountered: %d", tie_count)
    return total, grad, tie_count


def total_loss(params: ModelParams, batch: ContrastiveBatch, tau: float) -> float:
    """Patch and global contrastive terms averaged over P+1 terms and N items."""
    value, _, _ = _batch_loss(params, batch, tau, want_grad=False)
    return value


def loss_and_grad(params: ModelParams, batch: ContrastiveBatch, tau: float):
    """Loss value, analytic d(loss)/d(weights), and the absolute-value tie count."""
    return _batch_loss(params, batch, tau, want_grad=True)


def grad_total_loss(params: ModelParams, batch: ContrastiveBatch, tau: float) -> np.ndarray:
    """Analytic gradient of ``total_loss`` with respect to the weights."""
    _, grad, _ = _batch_loss(params, batch, tau, want_grad=True)
    return grad


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), step=0)


def adam_step(
    params: ModelParams,
    grad: np.ndarray,
    state: AdamState,
    lr: float = 1e-2,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam update; returns (new params, new state)."""
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != params.weights.shape:
        raise InvalidInputError("gradient shape does not match weights")
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    w = params.weights - lr * m_hat / (np.sqrt(v_hat) + eps)
    return ModelParams(w), AdamState(m=m, v=v, step=t)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the unsupervised run."""

    hash_bits: int = 32
    tau: float = 0.3
    epochs: int = 50
    batch_size: int = 8
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    grid_h: int = 4
    grid_w: int = 4

    def __post_init__(self):
        if self.hash_bits < 1:
            raise InvalidInputError("hash_bits must be >= 1")
        if self.tau <= 0:
            raise InvalidInputError("tau must be positive")
        if self.epochs < 0:
            raise InvalidInputError("epochs must be >= 0")
        if self.batch_size < 2:
            raise InvalidInputError("batch_size must be >= 2")
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidInputError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise InvalidInputError("adam_eps must be positive")
        if self.grid_h < 1 or self.grid_w < 1:
            raise InvalidInputError("grid dimensions must be >= 1")


def train(images, cfg: TrainConfig, aug: AugmentationConfig):
    """Optimize a fresh head on the images; returns (params, per-epoch mean loss).

    Deterministic for fixed seeds: image order, augmentation draws and the
    optimizer trajectory all derive from cfg.seed and aug.seed.
    """
    sources = list(images)
    if len(sources) < 2:
        raise InvalidInputError("training needs at least 2 images")
    params = init_params(cfg.hash_bits, DESCRIPTOR_DIM, cfg.seed)
    state = AdamState.zeros(params.weights.shape)
    order_rng = np.random.default_rng([cfg.seed & 0xFFFFFFFF, 0x0D0E])
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(sources))
        epoch_losses = []
        for b_idx in range(0, len(sources), cfg.batch_size):
            chunk = [sources[i] for i in order[b_idx : b_idx + cfg.batch_size]]
            if len(chunk) < 2:
                continue  # a lone leftover item has no negatives
            epoch_seed = epoch * 100_003 + b_idx
            batch = build_batch(chunk, aug, epoch_seed, cfg.grid_h, cfg.grid_w)
            loss, grad, _ = loss_and_grad(params, batch, cfg.tau)
            params, state = adam_step(
                params, grad, state,
                lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2,
                eps=cfg.adam_eps,
            )
            epoch_losses.append(loss)
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        history.append(mean_loss)
        logger.info("epoch %d mean loss %.6f", epoch, mean_loss)
    return params, history
