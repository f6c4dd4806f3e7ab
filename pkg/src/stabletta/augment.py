"""Stabilized test-time augmentation policies, plus the standard baseline set.

The stabilized policy blends every pass with one fixed reference image: either
a convex pixel blend (weight lambda on the original, drawn from a narrow
interval) or a paste of a fixed-size window — floor(H/2) x floor(W/2),
one quarter of the area — copied from the reference at identical coordinates.
Each pass picks one of the two at random.

The baseline set (horizontal flip, random crop with padding, random affine,
random erasing, high-variance mixup/cutmix) exists only so ablations can
replay conventional TTA against the stabilized policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import DatasetManifest, ImageTensor
from .rng import substream

# stream tag for the run-wide reference choice; outside the (sample, pass)
# key space so it can never collide with per-pass streams
_REF_STREAM_TAG = 0x524546


@dataclass(frozen=True)
class AugPolicyConfig:
    lambda_min: float = 0.7
    lambda_max: float = 0.9
    cutmix_area_fraction: float = 0.25
    p_mixup: float = 0.5
    reference_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lambda_min <= self.lambda_max <= 1.0:
            raise ValueError(
                f"lambda bounds must satisfy 0 <= min <= max <= 1, "
                f"got [{self.lambda_min}, {self.lambda_max}]"
            )
        if not 0.0 < self.cutmix_area_fraction < 1.0:
            raise ValueError("cutmix_area_fraction must lie in (0, 1)")
        if not 0.0 <= self.p_mixup <= 1.0:
            raise ValueError("p_mixup must lie in [0, 1]")


@dataclass(frozen=True)
class ReferenceImage:
    tensor: ImageTensor
    source_index: int
    seed: int


@dataclass(frozen=True)
class AugPassRecord:
    kind: str  # "mixup_star" | "cutmix_star" | "baseline:<name>"
    lam: float | None = None
    window: tuple | None = None  # (top, left, h_w, w_w)

    def to_json_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.lam is not None:
            out["lambda"] = self.lam
        if self.window is not None:
            out["window"] = list(self.window)
        return out


def select_reference(manifest: DatasetManifest, seed: int, loader) -> ReferenceImage:
    """Pick the run-wide reference image: one uniform index, fixed for the run.

    ``loader`` maps a manifest path to an ImageTensor; splitting it out keeps
    the selection testable without touching the filesystem.
    """
    if not manifest.entries:
        raise ValueError("empty manifest")
    idx = int(substream(seed, _REF_STREAM_TAG).integers(len(manifest.entries)))
    return ReferenceImage(
        tensor=loader(manifest.entries[idx][0]),
        source_index=idx,
        seed=seed,
    )


def _check_pair(x: ImageTensor, ref: ImageTensor):
    if x.data.shape != ref.data.shape:
        raise ValueError(
            f"shape mismatch: {x.data.shape} vs {ref.data.shape}"
        )
    if x.state != ref.state:
        raise ValueError(f"state mismatch: {x.state!r} vs {ref.state!r}")


def mixup_star(x: ImageTensor, ref: ReferenceImage, lam: float) -> ImageTensor:
    """lambda·x + (1 - lambda)·reference, elementwise."""
    _check_pair(x, ref.tensor)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return ImageTensor(
        data=lam * x.data + (1.0 - lam) * ref.tensor.data, state=x.state
    )


def cutmix_window(h: int, w: int) -> tuple[int, int]:
    """Window side lengths: floor of half of each side (quarter area)."""
    return h // 2, w // 2


def cutmix_star(x: ImageTensor, ref: ReferenceImage, top: int, left: int) -> ImageTensor:
    """Copy the fixed-size reference window onto x at the same coordinates."""
    _check_pair(x, ref.tensor)
    h, w = x.height, x.width
    wh, ww = cutmix_window(h, w)
    if not (0 <= top and top + wh <= h and 0 <= left and left + ww <= w):
        raise ValueError(
            f"window ({top}, {left}, {wh}, {ww}) out of bounds for {h}x{w}"
        )
    out = x.data.copy()
    out[:, top : top + wh, left : left + ww] = ref.tensor.data[
        :, top : top + wh, left : left + ww
    ]
    return ImageTensor(data=out, state=x.state)


def generate_passes(
    x: ImageTensor,
    ref: ReferenceImage,
    n_passes: int,
    cfg: AugPolicyConfig,
    seed: int,
    sample_index: int = 0,
) -> list[tuple[ImageTensor, AugPassRecord]]:
    """Draw N stabilized passes for one sample.

    Per pass: mixup with probability p_mixup (lambda uniform in
    [lambda_min, lambda_max]) else cutmix at a uniform valid window position.
    The random stream is addressed by (seed, sample_index, pass_index), so
    passes are reproducible regardless of evaluation order.
    """
    if n_passes < 1:
        raise ValueError(f"need at least one pass, got {n_passes}")
    h, w = x.height, x.width
    wh, ww = cutmix_window(h, w)
    out = []
    for pass_index in range(n_passes):
        rng = substream(seed, sample_index, pass_index)
        if rng.random() < cfg.p_mixup:
            lam = float(rng.uniform(cfg.lambda_min, cfg.lambda_max))
            rec = AugPassRecord(kind="mixup_star", lam=lam)
            out.append((mixup_star(x, ref, lam), rec))
        else:
            top = int(rng.integers(0, h - wh + 1))
            left = int(rng.integers(0, w - ww + 1))
            rec = AugPassRecord(kind="cutmix_star", window=(top, left, wh, ww))
            out.append((cutmix_star(x, ref, top, left), rec))
    return out


def input_variance(passes) -> float:
    """(1/N)·sum ||pass_i - mean||² over flattened tensors (trace form)."""
    arrs = [p.data if isinstance(p, ImageTensor) else np.asarray(p) for p in passes]
    if len(arrs) < 2:
        raise ValueError("need at least 2 passes")
    stack = np.stack([a.ravel().astype(np.float64) for a in arrs])
    d = stack - stack.mean(axis=0, keepdims=True)
    return float((d**2).sum() / stack.shape[0])


# --- baseline augmentations (ablation only) --------------------------------

BASELINE_KINDS = (
    "hflip",
    "random_crop",
    "random_affine",
    "random_erasing",
    "mixup",
    "cutmix",
)

_BASELINE_DEFAULTS = {
    "hflip": {"p": 0.5},
    "random_crop": {"padding": 32},
    "random_affine": {
        "degrees": 15.0,
        "translate": (0.1, 0.1),
        "scale": (0.9, 1.1),
        "shear": 10.0,
    },
    "random_erasing": {"p": 0.1, "scale": (0.02, 0.33), "ratio": (0.3, 3.3)},
    "mixup": {"alpha": 0.2},
    "cutmix": {"alpha": 1.0},
}


def _affine_matrix(angle_deg, shear_deg, scale, h, w):
    # rotation+shear+scale about the image center, as a 2x2 map plus offset
    a = math.radians(angle_deg)
    s = math.radians(shear_deg)
    m = np.array(
        [
            [math.cos(a), -math.sin(a + s)],
            [math.sin(a), math.cos(a + s)],
        ]
    ) * scale
    inv = np.linalg.inv(m)
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = center - inv @ center
    return inv, offset


def baseline_augment(
    x: ImageTensor, kind: str, rng: np.random.Generator, params: dict | None = None,
    partner: ImageTensor | None = None,
) -> ImageTensor:
    """One conventional augmentation pass with the standard defaults.

    mixup/cutmix here are the high-variance versions (Beta-sampled strength,
    random window position) and blend with ``partner`` — callers supply the
    run's reference image, the only other image in scope at test time.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline augmentation {kind!r}")
    p = dict(_BASELINE_DEFAULTS[kind])
    if params:
        p.update(params)
    data = x.data
    h, w = x.height, x.width

    if kind == "hflip":
        if rng.random() < p["p"]:
            data = data[:, :, ::-1].copy()
    elif kind == "random_crop":
        pad = p["padding"]
        padded = np.pad(data, ((0, 0), (pad, pad), (pad, pad)))
        top = int(rng.integers(0, 2 * pad + 1))
        left = int(rng.integers(0, 2 * pad + 1))
        data = padded[:, top : top + h, left : left + w].copy()
    elif kind == "random_affine":
        angle = float(rng.uniform(-p["degrees"], p["degrees"]))
        tx = float(rng.uniform(-p["translate"][0], p["translate"][0])) * w
        ty = float(rng.uniform(-p["translate"][1], p["translate"][1])) * h
        scale = float(rng.uniform(*p["scale"]))
        shear = float(rng.uniform(-p["shear"], p["shear"]))
        inv, offset = _affine_matrix(angle, shear, scale, h, w)
        offset = offset - inv @ np.array([ty, tx])
        data = np.stack(
            [
                ndimage.affine_transform(
                    ch, inv, offset=offset, order=1, mode="constant", cval=0.0
                )
                for ch in data
            ]
        )
    elif kind == "random_erasing":
        if rng.random() < p["p"]:
            area = h * w
            for _ in range(10):  # standard rejection loop
                target = float(rng.uniform(*p["scale"])) * area
                log_r = rng.uniform(math.log(p["ratio"][0]), math.log(p["ratio"][1]))
                ratio = math.exp(log_r)
                eh = int(round(math.sqrt(target * ratio)))
                ew = int(round(math.sqrt(target / ratio)))
                if 0 < eh <= h and 0 < ew <= w:
                    top = int(rng.integers(0, h - eh + 1))
                    left = int(rng.integers(0, w - ew + 1))
                    data = data.copy()
                    data[:, top : top + eh, left : left + ew] = 0.0
                    break
    elif kind == "mixup":
        if partner is None:
            raise ValueError("baseline mixup needs a partner image")
        lam = float(rng.beta(p["alpha"], p["alpha"]))
        data = lam * data + (1.0 - lam) * partner.data
    elif kind == "cutmix":
        if partner is None:
            raise ValueError("baseline cutmix needs a partner image")
        lam = float(rng.beta(p["alpha"], p["alpha"]))
        # window area (1 - lam), aspect-preserving square-root sides
        cut = math.sqrt(1.0 - lam)
        eh, ew = int(round(h * cut)), int(round(w * cut))
        if eh > 0 and ew > 0:
            top = int(rng.integers(0, h - eh + 1))
            left = int(rng.integers(0, w - ew + 1))
            data = data.copy()
            data[:, top : top + eh, left : left + ew] = partner.data[
                :, top : top + eh, left : left + ew
            ]
    out = np.clip(data, 0.0, 1.0) if x.state == "unit" else data
    return ImageTensor(data=np.ascontiguousarray(out), state=x.state)
