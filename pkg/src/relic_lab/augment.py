"""Image augmentations used as samplers of style interventions.

Images are float arrays of shape ``(n, h, w, c)`` with ``c`` in {1, 3} and
values in ``[0, 1]``. A pipeline application is split in two: sampling a
:class:`DrawBatch` (every random choice, resolved) and applying it. Applying
the same draws to the same images always reproduces the same output.

Stages run in a fixed order: crop, flip, color jitter, grayscale, blur,
solarize, normalize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

LUMA_WEIGHTS = np.array([0.2989, 0.587, 0.114])
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
_CROP_ATTEMPTS = 10


@dataclass(frozen=True)
class AugmentationSpec:
    crop_area_range: tuple = (0.08, 1.0)
    aspect_range: tuple = (3 / 4, 4 / 3)
    out_size: tuple | None = None  # (h, w); None keeps the input size
    flip_prob: float = 0.5
    jitter_prob: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    grayscale_prob: float = 0.2
    # Full-scale recipe uses a 23x23 kernel on 224px images.
    blur_kernel_size: int = 3
    blur_sigma_range: tuple = (0.1, 2.0)
    blur_prob: float = 0.5
    solarize_prob: float = 0.2
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD

    def __post_init__(self):
        for name in ("crop_area_range", "aspect_range", "blur_sigma_range", "mean", "std"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.out_size is not None:
            object.__setattr__(self, "out_size", tuple(int(v) for v in self.out_size))
        bad = []
        lo, hi = self.crop_area_range
        if not 0 < lo <= hi <= 1:
            bad.append("crop_area_range")
        alo, ahi = self.aspect_range
        if not 0 < alo <= ahi:
            bad.append("aspect_range")
        if self.blur_kernel_size < 1 or self.blur_kernel_size % 2 == 0:
            bad.append("blur_kernel_size")
        slo, shi = self.blur_sigma_range
        if not 0 < slo <= shi:
            bad.append("blur_sigma_range")
        for name in ("flip_prob", "jitter_prob", "grayscale_prob", "blur_prob", "solarize_prob"):
            if not 0 <= getattr(self, name) <= 1:
                bad.append(name)
        for name in ("brightness", "contrast", "saturation"):
            if not 0 <= getattr(self, name) < 1:
                bad.append(name)
        if not 0 <= self.hue <= 0.5:
            bad.append("hue")
        if len(self.mean) != len(self.std) or min(self.std) <= 0:
            bad.append("std")
        if self.out_size is not None and min(self.out_size) < 1:
            bad.append("out_size")
        if bad:
            raise ConfigError(f"invalid augmentation settings: {', '.join(bad)}", bad)

    @classmethod
    def disabled(cls, **overrides) -> "AugmentationSpec":
        """Identity crop, no random stages; only resize and normalize remain."""
        base = dict(
            crop_area_range=(1.0, 1.0),
            aspect_range=(1.0, 1.0),
            flip_prob=0.0,
            jitter_prob=0.0,
            grayscale_prob=0.0,
            blur_prob=0.0,
            solarize_prob=0.0,
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class AugmentationDraw:
    """Resolved random choices for one image."""

    crop: tuple  # (top, left, height, width)
    flip: bool
    jitter: bool
    jitter_factors: tuple  # brightness, contrast, saturation multipliers; hue shift
    jitter_order: tuple
    grayscale: bool
    blur: bool
    sigma: float
    solarize: bool


@dataclass
class DrawBatch:
    """Struct-of-arrays form of a list of :class:`AugmentationDraw`."""

    crop: np.ndarray  # (n, 4) int
    flip: np.ndarray
    jitter: np.ndarray
    jitter_factors: np.ndarray  # (n, 4)
    jitter_order: np.ndarray  # (n, 4) int
    grayscale: np.ndarray
    blur: np.ndarray
    sigma: np.ndarray
    solarize: np.ndarray

    def __len__(self):
        return len(self.flip)

    def __getitem__(self, i) -> AugmentationDraw:
        return AugmentationDraw(
            crop=tuple(int(v) for v in self.crop[i]),
            flip=bool(self.flip[i]),
            jitter=bool(self.jitter[i]),
            jitter_factors=tuple(float(v) for v in self.jitter_factors[i]),
            jitter_order=tuple(int(v) for v in self.jitter_order[i]),
            grayscale=bool(self.grayscale[i]),
            blur=bool(self.blur[i]),
            sigma=float(self.sigma[i]),
            solarize=bool(self.solarize[i]),
        )

    def to_list(self) -> list:
        return [self[i] for i in range(len(self))]

    @classmethod
    def from_list(cls, draws) -> "DrawBatch":
        draws = list(draws)
        return cls(
            crop=np.array([d.crop for d in draws], dtype=np.int64).reshape(-1, 4),
            flip=np.array([d.flip for d in draws], dtype=bool),
            jitter=np.array([d.jitter for d in draws], dtype=bool),
            jitter_factors=np.array([d.jitter_factors for d in draws], dtype=np.float64).reshape(-1, 4),
            jitter_order=np.array([d.jitter_order for d in draws], dtype=np.int64).reshape(-1, 4),
            grayscale=np.array([d.grayscale for d in draws], dtype=bool),
            blur=np.array([d.blur for d in draws], dtype=bool),
            sigma=np.array([d.sigma for d in draws], dtype=np.float64),
            solarize=np.array([d.solarize for d in draws], dtype=bool),
        )


def check_images(images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[3] not in (1, 3):
        raise ShapeError(f"expected images of shape (n, h, w, c) with c in (1, 3), got {images.shape}")
    return images


def _check_unit_range(images: np.ndarray, op: str) -> None:
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise ContractError(f"{op} expects pixel values in [0, 1]")


# -- individual operations --------------------------------------------------------


def solarize(images: np.ndarray) -> np.ndarray:
    """``x`` below 0.5 is kept, ``x >= 0.5`` maps to ``1 - x``."""
    images = np.asarray(images, dtype=np.float64)
    _check_unit_range(images, "solarize")
    return np.where(images < 0.5, images, 1.0 - images)


def gaussian_kernel(sigma, kernel_size: int) -> np.ndarray:
    """Truncated discrete Gaussian weights, rows summing to 1. ``sigma`` may be a vector."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ContractError(f"kernel_size must be odd and positive, got {kernel_size}")
    sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    if np.any(sigma <= 0):
        raise ContractError("sigma must be positive")
    r = kernel_size // 2
    offsets = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-(offsets[None, :] ** 2) / (2.0 * sigma[:, None] ** 2))
    return w / w.sum(axis=1, keepdims=True)


def _blur_axis(images: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    k = weights.shape[1]
    r = k // 2
    pad = [(0, 0)] * 4
    pad[axis] = (r, r)
    padded = np.pad(images, pad, mode="edge")
    size = images.shape[axis]
    out = np.zeros_like(images)
    for j in range(k):
        sl = [slice(None)] * 4
        sl[axis] = slice(j, j + size)
        out += weights[:, j, None, None, None] * padded[tuple(sl)]
    return out


def gaussian_blur(images: np.ndarray, sigma, kernel_size: int) -> np.ndarray:
    """Separable Gaussian blur with clamp-to-edge borders.

    ``sigma`` is a scalar or one value per image.
    """
    images = check_images(images)
    weights = gaussian_kernel(sigma, kernel_size)
    if weights.shape[0] == 1:
        weights = np.repeat(weights, images.shape[0], axis=0)
    elif weights.shape[0] != images.shape[0]:
        raise ShapeError("one sigma per image required")
    return _blur_axis(_blur_axis(images, weights, 2), weights, 1)


def _bilinear_crop_resize(images, crops, out_h, out_w):
    n = images.shape[0]
    top, left, ch, cw = (crops[:, i].astype(np.float64) for i in range(4))
    iy = np.arange(out_h, dtype=np.float64)
    ix = np.arange(out_w, dtype=np.float64)
    ys = top[:, None] + (iy[None, :] + 0.5) * (ch[:, None] / out_h) - 0.5
    xs = left[:, None] + (ix[None, :] + 0.5) * (cw[:, None] / out_w) - 0.5
    ys = np.clip(ys, top[:, None], (top + ch - 1)[:, None])
    xs = np.clip(xs, left[:, None], (left + cw - 1)[:, None])
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, (top + ch - 1).astype(np.int64)[:, None])
    x1 = np.minimum(x0 + 1, (left + cw - 1).astype(np.int64)[:, None])
    wy = (ys - y0)[:, :, None, None]
    wx = (xs - x0)[:, None, :, None]
    b = np.arange(n)[:, None, None]
    a00 = images[b, y0[:, :, None], x0[:, None, :]]
    a01 = images[b, y0[:, :, None], x1[:, None, :]]
    a10 = images[b, y1[:, :, None], x0[:, None, :]]
    a11 = images[b, y1[:, :, None], x1[:, None, :]]
    top_row = a00 + (a01 - a00) * wx
    bottom_row = a10 + (a11 - a10) * wx
    return top_row + (bottom_row - top_row) * wy


def sample_crops(rng: np.random.Generator, n: int, h: int, w: int, area_range, aspect_range) -> np.ndarray:
    """Crop rectangles ``(top, left, height, width)`` for ``n`` images of size ``h x w``."""
    area = h * w
    frac = rng.uniform(area_range[0], area_range[1], size=(n, _CROP_ATTEMPTS))
    log_ratio = rng.uniform(math.log(aspect_range[0]), math.log(aspect_range[1]), size=(n, _CROP_ATTEMPTS))
    u_top = rng.random((n, _CROP_ATTEMPTS))
    u_left = rng.random((n, _CROP_ATTEMPTS))
    ratio = np.exp(log_ratio)
    cw = np.rint(np.sqrt(frac * area * ratio)).astype(np.int64)
    ch = np.rint(np.sqrt(frac * area / ratio)).astype(np.int64)
    ok = (cw >= 1) & (cw <= w) & (ch >= 1) & (ch <= h)
    first = np.argmax(ok, axis=1)
    found = ok[np.arange(n), first]
    crops = np.zeros((n, 4), dtype=np.int64)
    rows = np.arange(n)
    sel_h = ch[rows, first]
    sel_w = cw[rows, first]
    crops[:, 0] = np.floor(u_top[rows, first] * (h - sel_h + 1)).astype(np.int64)
    crops[:, 1] = np.floor(u_left[rows, first] * (w - sel_w + 1)).astype(np.int64)
    crops[:, 2] = sel_h
    crops[:, 3] = sel_w
    if not found.all():
        crops[~found] = _fallback_crop(h, w, aspect_range)
    return crops


def _fallback_crop(h, w, aspect_range):
    in_ratio = w / h
    if in_ratio < aspect_range[0]:
        cw = w
        ch = min(h, max(1, int(round(cw / aspect_range[0]))))
    elif in_ratio > aspect_range[1]:
        ch = h
        cw = min(w, max(1, int(round(ch * aspect_range[1]))))
    else:
        ch, cw = h, w
    return np.array([(h - ch) // 2, (w - cw) // 2, ch, cw], dtype=np.int64)


def random_resized_crop(images: np.ndarray, crops_or_rng, out_size=None, area_range=(0.08, 1.0), aspect_range=(3 / 4, 4 / 3)):
    """Crop each image and resize bilinearly to ``out_size`` (defaults to the input size).

    ``crops_or_rng`` is either an ``(n, 4)`` array of ``(top, left, height, width)``
    rectangles or a numpy Generator used to sample them.
    """
    images = check_images(images)
    n, h, w, _ = images.shape
    if h < 2 or w < 2:
        raise ContractError("random_resized_crop needs images of at least 2x2")
    if isinstance(crops_or_rng, np.random.Generator):
        crops = sample_crops(crops_or_rng, n, h, w, area_range, aspect_range)
    else:
        crops = np.asarray(crops_or_rng, dtype=np.int64).reshape(n, 4)
    out_h, out_w = out_size if out_size is not None else (h, w)
    return _bilinear_crop_resize(images, crops, out_h, out_w)


def grayscale(images: np.ndarray) -> np.ndarray:
    """Luminance replicated to every channel. Weights are renormalized to sum to 1."""
    images = check_images(images)
    if images.shape[3] == 1:
        return images.copy()
    wts = LUMA_WEIGHTS / LUMA_WEIGHTS.sum()
    lum = images @ wts
    return np.repeat(lum[..., None], 3, axis=3)


def _rgb_to_hsv(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    hue = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    hue = np.where(delta > 0, (hue / 6.0) % 1.0, 0.0)
    return hue, s, v


def _hsv_to_rgb(hue, s, v):
    i = np.floor(hue * 6.0)
    f = hue * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def adjust_brightness(images, factor):
    return np.clip(images * _per_image(factor, images), 0.0, 1.0)


def adjust_contrast(images, factor):
    m = (grayscale(images) if images.shape[3] == 3 else images).mean(axis=(1, 2, 3), keepdims=True)
    return np.clip((images - m) * _per_image(factor, images) + m, 0.0, 1.0)


def adjust_saturation(images, factor):
    if images.shape[3] == 1:
        return images.copy()
    gray = grayscale(images)
    return np.clip((images - gray) * _per_image(factor, images) + gray, 0.0, 1.0)


def adjust_hue(images, shift):
    if images.shape[3] == 1:
        return images.copy()
    hue, s, v = _rgb_to_hsv(images)
    shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), (images.shape[0],))
    hue = (hue + shift[:, None, None]) % 1.0
    return np.clip(_hsv_to_rgb(hue, s, v), 0.0, 1.0)


def _per_image(factor, images):
    factor = np.asarray(factor, dtype=np.float64)
    if factor.ndim == 0:
        return factor
    return factor[:, None, None, None]


_JITTER_OPS = (adjust_brightness, adjust_contrast, adjust_saturation, adjust_hue)


def color_jitter(images, factors, order, active=None):
    """Brightness, contrast, saturation and hue in a per-image order.

    ``factors`` is ``(n, 4)``: three multipliers and a hue shift. ``order`` is
    ``(n, 4)``, a permutation of 0..3 per image.
    """
    images = check_images(images).copy()
    n = images.shape[0]
    active = np.ones(n, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    factors = np.asarray(factors, dtype=np.float64).reshape(n, 4)
    order = np.asarray(order, dtype=np.int64).reshape(n, 4)
    for pos in range(4):
        for op in range(4):
            sel = active & (order[:, pos] == op)
            if sel.any():
                images[sel] = _JITTER_OPS[op](images[sel], factors[sel, op])
    return images


def normalize(images, mean, std):
    images = check_images(images)
    c = images.shape[3]
    mean = np.asarray(mean, dtype=np.float64)[:c]
    std = np.asarray(std, dtype=np.float64)[:c]
    return (images - mean) / std


# -- pipeline ----------------------------------------------------------------------


def sample_draws(spec: AugmentationSpec, rng: np.random.Generator, n: int, h: int, w: int) -> DrawBatch:
    """Resolve every random choice of ``n`` independent pipeline applications."""
    crops = sample_crops(rng, n, h, w, spec.crop_area_range, spec.aspect_range)
    flip = rng.random(n) < spec.flip_prob
    jitter = rng.random(n) < spec.jitter_prob
    u = rng.uniform(-1.0, 1.0, size=(n, 4))
    strengths = np.array([spec.brightness, spec.contrast, spec.saturation, spec.hue])
    factors = u * strengths
    factors[:, :3] += 1.0
    order = np.argsort(rng.random((n, 4)), axis=1, kind="stable")
    gray = rng.random(n) < spec.grayscale_prob
    blur = rng.random(n) < spec.blur_prob
    sigma = rng.uniform(spec.blur_sigma_range[0], spec.blur_sigma_range[1], size=n)
    solar = rng.random(n) < spec.solarize_prob
    return DrawBatch(crops, flip, jitter, factors, order, gray, blur, sigma, solar)


def apply_draws(images: np.ndarray, draws: DrawBatch, spec: AugmentationSpec) -> np.ndarray:
    """Deterministically apply resolved ``draws`` to ``images``."""
    images = check_images(images)
    _check_unit_range(images, "augmentation")
    if len(draws) != images.shape[0]:
        raise ShapeError(f"{len(draws)} draws for {images.shape[0]} images")
    h, w = images.shape[1:3]
    out_h, out_w = spec.out_size if spec.out_size is not None else (h, w)
    x = _bilinear_crop_resize(images, draws.crop, out_h, out_w)
    if draws.flip.any():
        x[draws.flip] = x[draws.flip][:, :, ::-1, :]
    if draws.jitter.any():
        x = color_jitter(x, draws.jitter_factors, draws.jitter_order, draws.jitter)
    if draws.grayscale.any():
        x[draws.grayscale] = grayscale(x[draws.grayscale])
    if draws.blur.any():
        sel = draws.blur
        x[sel] = gaussian_blur(x[sel], draws.sigma[sel], spec.blur_kernel_size)
    if draws.solarize.any():
        x[draws.solarize] = solarize(np.clip(x[draws.solarize], 0.0, 1.0))
    return normalize(x, spec.mean, spec.std)


@dataclass
class Pipeline:
    """Callable pipeline that records every draw it makes in ``draws``."""

    spec: AugmentationSpec
    rng: np.random.Generator
    draws: list = field(default_factory=list)

    def __call__(self, images: np.ndarray) -> np.ndarray:
        images = check_images(images)
        n, h, w, _ = images.shape
        batch = sample_draws(self.spec, self.rng, n, h, w)
        self.draws.extend(batch.to_list())
        return apply_draws(images, batch, self.spec)

    def replay(self, images: np.ndarray, draws) -> np.ndarray:
        batch = draws if isinstance(draws, DrawBatch) else DrawBatch.from_list(draws)
        return apply_draws(images, batch, self.spec)


def compose_pipeline(spec: AugmentationSpec, rng: np.random.Generator):
    """Return ``(pipeline, draws)``; ``draws`` fills as the pipeline is applied."""
    pipe = Pipeline(spec, rng)
    return pipe, pipe.draws


def spec_fields() -> list:
    return [f.name for f in fields(AugmentationSpec)]
