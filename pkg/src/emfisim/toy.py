"""Shipped desk-scale fixtures: a trained 8x8-digits CNN and its eval set."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .nn import EvalSet, Model
from .store import WeightStore


def toy_dir() -> Path:
    return Path(str(resources.files("emfisim") / "data" / "toy"))


def toy_store() -> WeightStore:
    d = toy_dir()
    return WeightStore.load(d / "manifest.json", d / "weights.bin")


def toy_model() -> Model:
    return Model.load(toy_dir() / "model.json", toy_store())


def toy_eval_set() -> EvalSet:
    return EvalSet.load(toy_dir() / "eval.json")
