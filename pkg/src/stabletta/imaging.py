"""Dataset manifests, image decoding, and preprocessing to model tensors.

Tensors are channel-major float64 arrays of shape (3, H, W) carrying an
explicit normalization state: ``unit`` (values in [0, 1]) straight after
decoding/resizing, ``standardized`` after the per-channel affine map.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

_UNIT_SLACK = 1e-6


class ManifestError(ValueError):
    pass


class ImageFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ImageTensor:
    data: np.ndarray
    state: str  # "unit" | "standardized"

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[0] != 3:
            raise ValueError(f"expected shape (3, H, W), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("image tensor must be finite")
        if self.state == "unit":
            if d.min() < -_UNIT_SLACK or d.max() > 1.0 + _UNIT_SLACK:
                raise ValueError(
                    f"unit-state values outside [0, 1]: "
                    f"range [{d.min():.6g}, {d.max():.6g}]"
                )
        elif self.state != "standardized":
            raise ValueError(f"unknown state {self.state!r}")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple  # of (path, label)
    num_classes: int


@dataclass(frozen=True)
class PreprocessConfig:
    target_h: int
    target_w: int
    # conventional channel statistics; configurable, not baked in
    channel_mean: tuple = (0.485, 0.456, 0.406)
    channel_std: tuple = (0.229, 0.224, 0.225)
    resize: str = "bilinear"

    def __post_init__(self):
        if self.target_h < 1 or self.target_w < 1:
            raise ValueError("target size must be positive")
        if any(s <= 0 for s in self.channel_std):
            raise ValueError("channel_std must be componentwise positive")
        if self.resize != "bilinear":
            raise ValueError(f"unsupported resize mode {self.resize!r}")


def load_manifest(path, num_classes: int | None = None) -> DatasetManifest:
    """Parse a `path,label` CSV; labels validated against the declared C.

    When ``num_classes`` is omitted it is inferred as max(label) + 1.
    Relative image paths are resolved against the manifest's directory.
    """
    if not os.path.exists(path):
        raise ManifestError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path", "label"]:
            raise ManifestError(f"expected header 'path,label', got {header}")
        for row_num, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2 or not row[0].strip():
                raise ManifestError(f"malformed row {row_num}: {row}")
            try:
                label = int(row[1])
            except ValueError:
                raise ManifestError(
                    f"row {row_num}: label {row[1]!r} is not an integer"
                ) from None
            p = row[0].strip()
            if not os.path.isabs(p):
                p = os.path.join(base, p)
            entries.append((p, label))
    if not entries:
        raise ManifestError("no entries")
    if num_classes is None:
        num_classes = max(label for _, label in entries) + 1
    for row_num, (_, label) in enumerate(entries, start=1):
        if not 0 <= label < num_classes:
            raise ManifestError(
                f"row {row_num}: label {label} outside [0, {num_classes})"
            )
    return DatasetManifest(entries=tuple(entries), num_classes=num_classes)


def decode_image(path) -> np.ndarray:
    """Decode a PNG or JPEG file to an (H, W, 3) uint8 RGB array."""
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "JPEG"):
                raise ImageFormatError(
                    f"unsupported format {im.format!r} for {path}; PNG/JPEG only"
                )
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except OSError as exc:  # UnidentifiedImageError and truncated-file errors
        raise ImageFormatError(f"cannot decode {path}: {exc}") from exc


def _resize_bilinear(chw: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Plain bilinear resampling with half-pixel-centered, clamped sampling."""
    _, h, w = chw.shape
    if (th, tw) == (h, w):
        return chw.copy()
    ys = np.clip((np.arange(th) + 0.5) * (h / th) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(tw) + 0.5) * (w / tw) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    r0 = y0[:, None]
    r1 = y1[:, None]
    top = chw[:, r0, x0[None, :]] * (1 - wx) + chw[:, r0, x1[None, :]] * wx
    bot = chw[:, r1, x0[None, :]] * (1 - wx) + chw[:, r1, x1[None, :]] * wx
    return top * (1 - wy) + bot * wy


def preprocess(raw_image: np.ndarray, cfg: PreprocessConfig) -> ImageTensor:
    """uint8 RGB (H, W, 3) -> unit-state float64 tensor (3, target_h, target_w)."""
    raw = np.asarray(raw_image)
    if raw.ndim != 3 or raw.shape[2] != 3 or raw.shape[0] < 1 or raw.shape[1] < 1:
        raise ValueError(f"expected (H, W, 3) RGB pixels, got shape {raw.shape}")
    chw = raw.astype(np.float64).transpose(2, 0, 1) / 255.0
    out = _resize_bilinear(chw, cfg.target_h, cfg.target_w)
    return ImageTensor(data=out, state="unit")


def standardize(x: ImageTensor, cfg: PreprocessConfig) -> ImageTensor:
    """Per-channel (v - mean) / std; requires a unit-state tensor."""
    if x.state != "unit":
        raise ValueError(f"standardize expects state 'unit', got {x.state!r}")
    mean = np.asarray(cfg.channel_mean, dtype=np.float64)[:, None, None]
    std = np.asarray(cfg.channel_std, dtype=np.float64)[:, None, None]
    return ImageTensor(data=(x.data - mean) / std, state="standardized")


def unstandardize(x: ImageTensor, cfg: PreprocessConfig) -> ImageTensor:
    """Inverse affine map of standardize (mainly for round-trip checks)."""
    if x.state != "standardized":
        raise ValueError(
            f"unstandardize expects state 'standardized', got {x.state!r}"
        )
    mean = np.asarray(cfg.channel_mean, dtype=np.float64)[:, None, None]
    std = np.asarray(cfg.channel_std, dtype=np.float64)[:, None, None]
    return ImageTensor(data=x.data * std + mean, state="unit")
