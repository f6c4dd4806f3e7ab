#!/usr/bin/env python3
"""Regenerate the packaged tinycnn-digits weights.

Trains the zoo's tiny CNN on the quantized 8x8 digit images (1500 train /
297 held out, fixed split) and overwrites
src/stabletta_adapter/weights/tinycnn_digits_v1.pt.  Deterministic: fixed
torch seed, CPU, single-threaded.  Needs scikit-learn (the `retrain` extra).
"""

from __future__ import annotations

import sys

import numpy as np
import torch

from stabletta_adapter.digits import quantized_digits, split_indices, to_model_input
from stabletta_adapter.zoo import MODEL_SPECS, WEIGHTS_DIR

EPOCHS = 40
BATCH_SIZE = 128
LEARNING_RATE = 1e-3
TORCH_SEED = 0


def accuracy(model: torch.nn.Module, x: torch.Tensor, y: torch.Tensor) -> float:
    with torch.inference_mode():
        return (model(x).argmax(dim=1) == y).double().mean().item()


def main() -> int:
    torch.manual_seed(TORCH_SEED)
    torch.set_num_threads(1)

    spec = MODEL_SPECS["tinycnn-digits"]
    images, labels = quantized_digits()
    train_idx, test_idx = split_indices(len(images))

    x_train = torch.from_numpy(to_model_input(images[train_idx]))
    y_train = torch.from_numpy(labels[train_idx])
    x_test = torch.from_numpy(to_model_input(images[test_idx]))
    y_test = torch.from_numpy(labels[test_idx])

    model = spec.builder(spec)
    optimizer = torch.optim.Adam(model.parameters(), lr=LEARNING_RATE)
    loss_fn = torch.nn.CrossEntropyLoss()

    generator = torch.Generator().manual_seed(TORCH_SEED)
    for epoch in range(1, EPOCHS + 1):
        model.train()
        order = torch.randperm(len(x_train), generator=generator)
        for start in range(0, len(order), BATCH_SIZE):
            batch = order[start : start + BATCH_SIZE]
            optimizer.zero_grad()
            loss = loss_fn(model(x_train[batch]), y_train[batch])
            loss.backward()
            optimizer.step()
        model.eval()
        if epoch % 10 == 0 or epoch == EPOCHS:
            print(
                f"epoch {epoch:3d}  train {accuracy(model, x_train, y_train):.4f}"
                f"  held-out {accuracy(model, x_test, y_test):.4f}"
            )

    model.eval()
    held_out = accuracy(model, x_test, y_test)
    out_path = WEIGHTS_DIR / spec.weights_filename
    out_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out_path)
    n_params = sum(int(np.prod(p.shape)) for p in model.parameters())
    print(f"saved {out_path} ({n_params} parameters, held-out accuracy {held_out:.4f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
