#!/usr/bin/env python3
"""Train the shipped toy CNN on scikit-learn's 8x8 digits and export fixtures.

Writes model.json, manifest.json, weights.bin (FP32), eval.json and eval.bin
into src/emfisim/data/toy/. Needs torch and scikit-learn (``pip install
.[train]``); the package itself only reads the exported files.

    python scripts/train_toy.py [--epochs 60] [--seed 21]
"""
import argparse
from pathlib import Path

import numpy as np
import torch
import torch.nn as tnn
from sklearn.datasets import load_digits

from emfisim.nn import EvalSet, LayerSpec, Model
from emfisim.store import build_store

OUT = Path(__file__).resolve().parents[1] / "src" / "emfisim" / "data" / "toy"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--seed", type=int, default=21)
    ap.add_argument("--eval-size", type=int, default=512)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    digits = load_digits()
    x = (digits.images / 16.0).astype(np.float32)[:, None]
    y = digits.target.astype(np.int64)
    perm = np.random.default_rng(args.seed).permutation(len(y))
    n_train = len(y) * 2 // 3
    tr, te = perm[:n_train], perm[n_train:]
    # fixed-seed subsample of the held-out split
    te = np.sort(np.random.default_rng(args.seed).choice(te, size=args.eval_size, replace=False))

    net = tnn.Sequential(
        tnn.Conv2d(1, 16, 3, padding=1), tnn.ReLU(), tnn.MaxPool2d(2),
        tnn.Flatten(), tnn.Linear(256, 64), tnn.ReLU(), tnn.Linear(64, 10),
    )
    opt = torch.optim.Adam(net.parameters(), lr=3e-3, weight_decay=1e-4)
    xt, yt = torch.from_numpy(x[tr]), torch.from_numpy(y[tr])
    for epoch in range(args.epochs):
        order = torch.randperm(len(tr))
        for i in range(0, len(tr), 64):
            idx = order[i:i + 64]
            opt.zero_grad()
            loss = tnn.functional.cross_entropy(net(xt[idx]), yt[idx])
            loss.backward()
            opt.step()
    with torch.no_grad():
        acc = (net(torch.from_numpy(x[te])).argmax(1).numpy() == y[te]).mean()
    print(f"held-out top-1 (torch): {acc:.4f}")

    names = ["conv1", None, None, None, "fc1", None, "fc2"]
    tensors = []
    for name, mod in zip(names, net):
        if name:
            tensors.append((f"{name}.weight", mod.weight.detach().numpy()))
            tensors.append((f"{name}.bias", mod.bias.detach().numpy()))
    store = build_store(tensors, "fp32")
    layers = [
        LayerSpec("conv2d", "conv1.weight", "conv1.bias", stride=1, padding=1),
        LayerSpec("relu"), LayerSpec("maxpool2d", size=2, stride=2), LayerSpec("flatten"),
        LayerSpec("dense", "fc1.weight", "fc1.bias"), LayerSpec("relu"),
        LayerSpec("dense", "fc2.weight", "fc2.bias"),
    ]
    model = Model(tuple(layers), store, (1, 8, 8), 10)

    args.out.mkdir(parents=True, exist_ok=True)
    import json
    (args.out / "model.json").write_text(json.dumps(model.description(), indent=2) + "\n")
    store.save(args.out / "manifest.json", args.out / "weights.bin")
    ev = EvalSet(x[te], y[te], args.seed, {"source": "sklearn digits 8x8, held-out third"})
    ev.save(args.out / "eval.json", args.out / "eval.bin")
    print(f"wrote fixtures to {args.out} ({len(store.blob)} weight bytes)")


if __name__ == "__main__":
    main()
