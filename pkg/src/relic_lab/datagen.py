"""Synthetic content/style images with known latents, noise corruptions, and the RLDS file format."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, FormatError

RENDER_RULES = ("stripes", "quadrant")

# Severity grids follow the ImageNet-C noise family parameterization.
CORRUPTION_GRIDS = {
    "gaussian_noise": (0.08, 0.12, 0.18, 0.26, 0.38),  # pixel std
    "shot_noise": (60.0, 25.0, 12.0, 5.0, 3.0),  # photon count scale
    "impulse_noise": (0.03, 0.06, 0.09, 0.17, 0.27),  # salt-and-pepper rate
}

MAGIC = b"RLDS"
VERSION = 1
_HEADER = struct.Struct("<4sHIIII")


@dataclass(frozen=True)
class ContentStyleConfig:
    n_content: int = 4
    n_style: int = 4
    height: int = 16
    width: int = 16
    channels: int = 3
    samples_per_content: int = 500
    render_rule: str = "stripes"
    noise_std: float = 0.05
    stripe_period: float = 4.0

    def __post_init__(self):
        bad = []
        if self.n_content < 2:
            bad.append("n_content")
        if self.n_style < 1:
            bad.append("n_style")
        if self.height < 8:
            bad.append("height")
        if self.width < 8:
            bad.append("width")
        if self.channels not in (1, 3):
            bad.append("channels")
        if self.samples_per_content < 1:
            bad.append("samples_per_content")
        if self.render_rule not in RENDER_RULES:
            bad.append("render_rule")
        if not self.noise_std >= 0:
            bad.append("noise_std")
        if not self.stripe_period > 0:
            bad.append("stripe_period")
        if bad:
            raise ConfigError(f"invalid dataset settings: {', '.join(bad)}", bad)

    @property
    def n_samples(self) -> int:
        return self.samples_per_content * self.n_content


@dataclass(eq=False)
class LabeledDataset:
    images: np.ndarray  # (n, h, w, c) float32 in [0, 1]
    content: np.ndarray  # (n,) uint16
    style: np.ndarray  # (n,) uint16
    split: str = ""

    def __post_init__(self):
        n = self.images.shape[0]
        if self.images.ndim != 4 or self.content.shape != (n,) or self.style.shape != (n,):
            raise ContractError("label arrays must have one entry per image")

    def __len__(self):
        return self.images.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.images.dtype == other.images.dtype
            and np.array_equal(self.images, other.images)
            and np.array_equal(self.content, other.content)
            and np.array_equal(self.style, other.style)
        )

    __hash__ = None

    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self), -1).astype(np.float64)

    def subset(self, idx, split: str | None = None) -> "LabeledDataset":
        return LabeledDataset(self.images[idx], self.content[idx], self.style[idx], self.split if split is None else split)


def _pattern(rule: str, content: int, n_content: int, h: int, w: int, phase: float, period: float) -> np.ndarray:
    """Foreground mask in [0, 1] for one content class.

    Every template is mapped to itself by a horizontal flip, so the flip
    augmentation never turns one content class into another.
    """
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if rule == "quadrant":
        # content picks which of n_content horizontal bands is lit
        band = np.floor(yy / h * n_content).astype(int)
        return (band == content).astype(np.float64)
    # stripes: horizontal, vertical, checkerboard, rings; longer periods past four classes
    period = period * (1.0 + 0.75 * (content // 4))
    k = 2 * np.pi / period
    template = content % 4
    if template == 0:
        return 0.5 + 0.5 * np.cos(k * yy + phase)
    if template == 1:
        return 0.5 + 0.5 * np.cos(k * xx + phase)
    if template == 2:
        return 0.5 + 0.5 * np.cos(k * xx + phase) * np.cos(k * yy + phase)
    r = np.hypot(yy - (h - 1) / 2, xx - (w - 1) / 2)
    return 0.5 + 0.5 * np.cos(k * r + phase)


def _style_colors(style: int, n_style: int, channels: int):
    """Background intensity and per-channel tint for one style value."""
    frac = style / max(n_style - 1, 1)
    background = 0.15 + 0.6 * frac
    if channels == 1:
        return background, np.ones(1)
    k = np.arange(3)
    tint = 0.75 + 0.25 * np.cos(2 * np.pi * (style / n_style + k / 3.0))
    return background, tint


def generate_content_style(cfg: ContentStyleConfig, seed) -> LabeledDataset:
    """Sample C and S independently and uniformly, then render.

    Content draws a pattern template, style sets the background level, a
    global tint and the pattern phase, and pixel noise is added before clamping to ``[0, 1]``.
    """
    rng = np.random.default_rng(seed)
    n, h, w, c = cfg.n_samples, cfg.height, cfg.width, cfg.channels
    content = rng.integers(0, cfg.n_content, size=n)
    style = rng.integers(0, cfg.n_style, size=n)
    # pattern phase is a style attribute, so images depend on (C, S) and pixel noise only
    phase = 2 * np.pi * style / cfg.n_style
    images = np.empty((n, h, w, c))
    for i in range(n):
        mask = _pattern(cfg.render_rule, int(content[i]), cfg.n_content, h, w, float(phase[i]), cfg.stripe_period)
        bg, tint = _style_colors(int(style[i]), cfg.n_style, c)
        fg = bg + 0.35 if bg < 0.5 else bg - 0.35
        gray = bg + (fg - bg) * mask
        images[i] = gray[..., None] * tint
    if cfg.noise_std > 0:
        images += rng.normal(0.0, cfg.noise_std, size=images.shape)
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    return LabeledDataset(images, content.astype(np.uint16), style.astype(np.uint16), "train")


def corrupt(images: np.ndarray, kind: str, severity: int, seed, grids=None) -> np.ndarray:
    """Apply one noise corruption at ``severity`` in 1..5; output clamped to [0, 1]."""
    grids = CORRUPTION_GRIDS if grids is None else grids
    if kind not in grids:
        raise ConfigError(f"unknown corruption kind {kind!r}", ["kind"])
    if not 1 <= int(severity) <= 5:
        raise ContractError(f"severity {severity} outside 1..5")
    level = grids[kind][int(severity) - 1]
    rng = np.random.default_rng(seed)
    x = np.asarray(images, dtype=np.float64)
    if kind == "gaussian_noise":
        out = x + rng.normal(0.0, level, size=x.shape)
    elif kind == "shot_noise":
        out = rng.poisson(np.clip(x, 0, 1) * level) / level
    else:
        hit = rng.random(x.shape) < level
        salt = rng.random(x.shape) < 0.5
        out = np.where(hit, salt.astype(np.float64), x)
    return np.clip(out, 0.0, 1.0).astype(np.asarray(images).dtype)


def serialize_dataset(ds: LabeledDataset, path) -> None:
    """Write the RLDS little-endian layout via a temp file and rename."""
    n, h, w, c = ds.images.shape
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, h, w, c))
        fh.write(ds.content.astype("<u2").tobytes())
        fh.write(ds.style.astype("<u2").tobytes())
        fh.write(np.ascontiguousarray(ds.images, dtype="<f4").tobytes())
    os.replace(tmp, path)


def deserialize_dataset(path, split: str = "") -> LabeledDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    return parse_dataset(blob, split)


def parse_dataset(blob: bytes, split: str = "") -> LabeledDataset:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", 0)
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header", len(blob))
    _, version, n, h, w, c = _HEADER.unpack_from(blob, 0)
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}, expected {VERSION}", 4)
    off = _HEADER.size
    sizes = (2 * n, 2 * n, 4 * n * h * w * c)
    expected = off + sum(sizes)
    if len(blob) < expected:
        raise FormatError(f"truncated dataset: {len(blob)} bytes, expected {expected}", len(blob))
    if len(blob) > expected:
        raise FormatError("trailing bytes after dataset payload", expected)
    content = np.frombuffer(blob, "<u2", n, off).astype(np.uint16)
    style = np.frombuffer(blob, "<u2", n, off + sizes[0]).astype(np.uint16)
    images = np.frombuffer(blob, "<f4", n * h * w * c, off + sizes[0] + sizes[1]).astype(np.float32).reshape(n, h, w, c)
    return LabeledDataset(images, content, style, split)
