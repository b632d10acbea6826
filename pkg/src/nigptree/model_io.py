"""JSON model files: schema-versioned, written atomically, byte-stable."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .tree import MODEL_FORMAT, MODEL_SCHEMA_VERSION, ClassTree, TrainConfig


class ModelFormatError(ValueError):
    pass


@dataclass
class ModelFile:
    tree: ClassTree
    config: TrainConfig
    class_names: list

    @property
    def n_classes(self):
        return self.tree.n_classes

    @property
    def input_dim(self):
        return self.tree.input_dim


def dumps_model(model: ModelFile) -> str:
    state = {
        "format": MODEL_FORMAT,
        "schema_version": MODEL_SCHEMA_VERSION,
        "config": model.config.to_dict(),
        "class_names": list(model.class_names),
        "input_dim": model.input_dim,
        "tree": model.tree.to_dict(),
    }
    # sorted keys and repr floats: the same model always gives the same bytes
    return json.dumps(state, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_atomic(path, text):
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def save_model(model: ModelFile, path):
    write_atomic(path, dumps_model(model))


def load_model(path) -> ModelFile:
    try:
        with open(path, encoding="utf-8") as fh:
            state = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a model file ({exc})") from None
    if not isinstance(state, dict) or state.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not a {MODEL_FORMAT} file")
    version = state.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ModelFormatError(
            f"{path}: schema version {version} is not supported (expected {MODEL_SCHEMA_VERSION})")
    try:
        tree = ClassTree.from_dict(state["tree"])
        config = TrainConfig.from_dict(state["config"])
        names = state["class_names"]
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: malformed model ({exc!r})") from None
    if len(names) != tree.n_classes:
        raise ModelFormatError(f"{path}: {len(names)} class names for {tree.n_classes} classes")
    return ModelFile(tree, config, names)
