"""Experiment configuration: a single JSON document validated up front."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from jsonschema import Draft202012Validator

from cersa_forge.adapters import AdapterKind, kind_from_dict
from cersa_forge.tasks import GENERATORS, SynthTask
from cersa_forge.train import ACTIVATIONS, HEADS, ModelSpec, TrainConfig

_POS_INT = {"type": "integer", "minimum": 1}
_UNIT = {"type": "number", "exclusiveMinimum": 0, "maximum": 1}

KIND_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "oneOf": [
        {"properties": {"kind": {"const": "full_ft"}}, "additionalProperties": False},
        {
            "properties": {"kind": {"enum": ["lora", "svfit_array", "frozen_uv"]}, "rank": _POS_INT},
            "required": ["rank"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "cersa"},
                "alpha": _UNIT,
                "beta": _UNIT,
                "split_rank": {"oneOf": [_POS_INT, {"type": "null"}]},
                "take_top": {"type": "boolean"},
            },
            "required": ["alpha", "beta"],
            "additionalProperties": False,
        },
    ],
}

SCHEMA = {
    "type": "object",
    "required": ["task", "adapters", "train", "output"],
    "additionalProperties": False,
    "properties": {
        "task": {
            "type": "object",
            "required": ["generator", "in_dim", "out_dim"],
            "additionalProperties": False,
            "properties": {
                "generator": {"enum": list(GENERATORS)},
                "in_dim": _POS_INT,
                "out_dim": _POS_INT,
                "n_train": _POS_INT,
                "n_test": _POS_INT,
                "noise": {"type": "number", "minimum": 0},
                "seed": {"type": "integer"},
                "rank": _POS_INT,
                "perturb": {"type": "number"},
                "angle": {"type": "number"},
                "spread": {"type": "number", "minimum": 0},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden": {"type": "array", "items": _POS_INT},
                "activation": {"enum": list(ACTIVATIONS)},
                "head": {"enum": list(HEADS)},
            },
        },
        "adapters": {"type": "array", "minItems": 1, "items": KIND_SCHEMA},
        "train": {
            "type": "object",
            "required": ["learning_rate", "steps", "batch_size"],
            "additionalProperties": False,
            "properties": {
                "learning_rate": {"type": "number", "minimum": 0},
                "weight_decay": {"type": "number", "minimum": 0},
                "steps": _POS_INT,
                "batch_size": _POS_INT,
                "seed": {"type": "integer"},
            },
        },
        "compare": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"seeds": {"type": "array", "minItems": 1, "items": {"type": "integer"}}},
        },
        "checkpoint_every": {"type": "integer", "minimum": 0},
        "output": {
            "type": "object",
            "required": ["dir"],
            "additionalProperties": False,
            "properties": {"dir": {"type": "string", "minLength": 1}},
        },
    },
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class ExperimentConfig:
    task: SynthTask
    hidden: tuple[int, ...]
    activation: str
    head: str
    kinds: tuple[AdapterKind, ...]
    train: TrainConfig
    seeds: tuple[int, ...]
    checkpoint_every: int
    out_dir: Path

    @property
    def dims(self) -> tuple[tuple[int, int], ...]:
        sizes = [self.task.in_dim, *self.hidden, self.task.out_dim]
        return tuple(zip(sizes[:-1], sizes[1:]))

    def model_spec(self) -> ModelSpec:
        """Spec for a single run: one kind for every layer, or one per layer."""
        dims = self.dims
        if len(self.kinds) == 1:
            return ModelSpec.uniform(dims, self.kinds[0], self.activation, self.head)
        if len(self.kinds) != len(dims):
            raise ConfigError(
                [f"adapters: {len(self.kinds)} kinds given for {len(dims)} layers (use --compare to compare kinds)"]
            )
        return ModelSpec(dims, self.kinds, self.activation, self.head)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(
            self,
            task=replace(self.task, seed=seed),
            train=replace(self.train, seed=seed),
            seeds=(seed,) if len(self.seeds) == 1 else self.seeds,
        )


def _path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = err.message.split("'")[1]
        parts.append(missing)
    return "/".join(parts) or "<root>"


def validate(doc) -> list[str]:
    validator = Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path])
    return [f"{_path(e)}: {e.message}" for e in errors]


def parse(doc: dict) -> ExperimentConfig:
    problems = validate(doc)
    if problems:
        raise ConfigError(problems)
    task_doc = doc["task"]
    model_doc = doc.get("model", {})
    train_doc = doc["train"]
    kinds = []
    for idx, kd in enumerate(doc["adapters"]):
        try:
            kinds.append(kind_from_dict(kd))
        except (ValueError, TypeError) as exc:
            problems.append(f"adapters/{idx}: {exc}")
    if problems:
        raise ConfigError(problems)
    seed = train_doc.get("seed", 0)
    train = TrainConfig(
        learning_rate=train_doc["learning_rate"],
        weight_decay=train_doc.get("weight_decay", 0.0),
        steps=train_doc["steps"],
        batch_size=train_doc["batch_size"],
        seed=seed,
    )
    return ExperimentConfig(
        task=SynthTask(**task_doc),
        hidden=tuple(model_doc.get("hidden", [])),
        activation=model_doc.get("activation", "tanh"),
        head=model_doc.get("head", "mse"),
        kinds=tuple(kinds),
        train=train,
        seeds=tuple(doc.get("compare", {}).get("seeds", [seed])),
        checkpoint_every=doc.get("checkpoint_every", 0),
        out_dir=Path(doc["output"]["dir"]),
    )


def load(path: Path | str) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc
    return parse(doc)
