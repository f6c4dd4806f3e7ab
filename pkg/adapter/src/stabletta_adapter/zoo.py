"""Model registry: names, input geometry, and weight loading.

The zoo maps a model name to its class count, expected input geometry, and
packaged weights file.  Listing the zoo touches no ML framework; torch is
imported only when a model is actually built, so `list-models` stays fast
and an unknown name is rejected before any heavy import.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

WEIGHTS_DIR = Path(__file__).resolve().parent / "weights"


class UnknownModelError(Exception):
    """The requested name is not in the zoo (serve exits 3, echoing the name)."""


class ModelLoadError(Exception):
    """The model exists but could not be constructed (serve exits 3 before HELLO)."""


@dataclass(frozen=True)
class ModelSpec:
    """One zoo entry: identity, geometry, and how to build the network."""

    name: str
    num_classes: int
    channels: int
    height: int
    width: int
    weights_filename: str
    builder: Callable = field(repr=False, compare=False)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


def _build_tiny_cnn(spec: ModelSpec):
    """Two 3x3 conv blocks, one 2x2 pool, two linear layers (~39k parameters)."""
    from torch import nn

    pooled = (spec.height // 2) * (spec.width // 2)
    return nn.Sequential(
        nn.Conv2d(spec.channels, 16, kernel_size=3, padding=1),
        nn.ReLU(),
        nn.Conv2d(16, 32, kernel_size=3, padding=1),
        nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Flatten(),
        nn.Linear(32 * pooled, 64),
        nn.ReLU(),
        nn.Linear(64, spec.num_classes),
    )


MODEL_SPECS: dict[str, ModelSpec] = {
    spec.name: spec
    for spec in (
        ModelSpec(
            name="tinycnn-digits",
            num_classes=10,
            channels=3,
            height=8,
            width=8,
            weights_filename="tinycnn_digits_v1.pt",
            builder=_build_tiny_cnn,
        ),
    )
}


def list_models() -> str:
    """Deterministic text table of model names, class counts, and input shapes."""
    rows = [("name", "classes", "input")]
    for name in sorted(MODEL_SPECS):
        spec = MODEL_SPECS[name]
        rows.append(
            (name, str(spec.num_classes), f"{spec.channels}x{spec.height}x{spec.width}")
        )
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    return "\n".join(
        "  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
        for row in rows
    )


def resolve_device(device: str):
    """Map the public device names onto what this host actually has."""
    import torch

    if device == "cpu":
        return torch.device("cpu")
    if device == "accelerator":
        if torch.cuda.is_available():
            return torch.device("cuda")
        raise ModelLoadError("accelerator requested but none is available on this host")
    raise ModelLoadError(f"unknown device {device!r} (expected cpu or accelerator)")


def load_model(name: str, device: str = "cpu", weights_path=None):
    """Build the named model with its frozen weights, in eval mode.

    Returns (spec, model, torch_device).  ``weights_path`` overrides the
    packaged weights file.  Failures raise UnknownModelError (bad name) or
    ModelLoadError (anything after name resolution).
    """
    spec = MODEL_SPECS.get(name)
    if spec is None:
        known = ", ".join(sorted(MODEL_SPECS))
        raise UnknownModelError(f"unknown model {name!r} (available: {known})")

    import torch

    torch_device = resolve_device(device)
    path = Path(weights_path) if weights_path is not None else WEIGHTS_DIR / spec.weights_filename
    if not path.is_file():
        raise ModelLoadError(f"weights file not found: {path}")
    try:
        state = torch.load(path, map_location=torch_device)
        model = spec.builder(spec)
        model.load_state_dict(state)
    except ModelLoadError:
        raise
    except Exception as exc:  # torch raises a mix of types for corrupt files
        raise ModelLoadError(f"cannot load weights for {name!r} from {path}: {exc}") from exc
    model.to(torch_device)
    model.eval()
    for param in model.parameters():
        param.requires_grad_(False)
    return spec, model, torch_device
