"""Provenance of the packaged tinycnn-digits weights: data prep and split.

The network was trained offline on scikit-learn's bundled 8x8 digit images.
Serving never touches this module; it exists so the weights can be
regenerated (scripts/train_tinycnn_digits.py) and audited (the test suite
scores the frozen weights on the held-out split defined here).  scikit-learn
is imported lazily and is only needed for those two activities.

Pixels are quantized to uint8 exactly as a grayscale PNG of the digit would
store them, and scaled to [0, 1] in float64 before the float32 cast, so the
tensors seen in training match what a client that decodes such a PNG sends.
"""

from __future__ import annotations

import numpy as np

TRAIN_SIZE = 1500
SPLIT_SEED = 0


def quantized_digits() -> tuple[np.ndarray, np.ndarray]:
    """All 1797 digits as uint8 images (N, 8, 8) with int64 labels."""
    from sklearn.datasets import load_digits

    data = load_digits()
    images = np.round(data.images / 16.0 * 255.0).astype(np.uint8)
    return images, data.target.astype(np.int64)


def split_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (train, held-out) index split of range(n)."""
    perm = np.random.default_rng(SPLIT_SEED).permutation(n)
    return perm[:TRAIN_SIZE], perm[TRAIN_SIZE:]


def to_model_input(images_u8: np.ndarray) -> np.ndarray:
    """uint8 (B, 8, 8) -> float32 (B, 3, 8, 8), gray replicated across channels."""
    unit = images_u8.astype(np.float64) / 255.0
    return np.repeat(unit[:, None, :, :], 3, axis=1).astype(np.float32)


def save_digit_png(image_u8: np.ndarray, path) -> None:
    """Write one uint8 (8, 8) digit as a grayscale PNG."""
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(image_u8), mode="L").save(path, format="PNG")
