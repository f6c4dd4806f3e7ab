import os
import sys

import numpy as np
import pytest
from PIL import Image

TESTS_DIR = os.path.dirname(os.path.abspath(__file__))
LOOPBACK = os.path.join(TESTS_DIR, "loopback_adapter.py")


def loopback_cmd(mode="normal", classes=6, channels=3, height=8, width=8):
    return (
        f"{sys.executable} {LOOPBACK} --mode {mode} --classes {classes} "
        f"--channels {channels} --height {height} --width {width}"
    )


def write_png(path, side=8, seed=0):
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(side, side, 3), dtype=np.uint8)
    Image.fromarray(arr, "RGB").save(path, format="PNG")
    return path


@pytest.fixture
def tiny_dataset(tmp_path):
    """Four 8x8 PNGs with labels 0..3 and a manifest next to them."""
    rows = ["path,label"]
    for i in range(4):
        write_png(tmp_path / f"img{i}.png", side=8, seed=100 + i)
        rows.append(f"img{i}.png,{i}")
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n")
    return str(manifest)
