import json

import pytest

from cersa_forge import config
from cersa_forge.adapters import Cersa, LoRA
from cersa_forge.config import ConfigError

DOC = {
    "task": {"generator": "rotated-teacher", "in_dim": 8, "out_dim": 6, "rank": 3},
    "model": {"hidden": [5]},
    "adapters": [{"kind": "cersa", "alpha": 0.95, "beta": 0.9}, {"kind": "lora", "rank": 2}],
    "train": {"learning_rate": 0.01, "steps": 10, "batch_size": 8, "seed": 4},
    "output": {"dir": "out"},
}


def test_parse():
    cfg = config.parse(DOC)
    assert cfg.dims == ((8, 5), (5, 6))
    assert cfg.kinds == (Cersa(0.95, 0.9), LoRA(2))
    assert cfg.seeds == (4,)
    spec = cfg.model_spec()
    assert spec.kinds == cfg.kinds
    cfg7 = cfg.with_seed(7)
    assert cfg7.task.seed == 7 and cfg7.train.seed == 7 and cfg7.seeds == (7,)


def test_all_violations_listed_with_paths():
    doc = json.loads(json.dumps(DOC))
    del doc["task"]["in_dim"]
    doc["train"]["steps"] = 0
    doc["adapters"][1]["rank"] = "two"
    doc["extra"] = 1
    with pytest.raises(ConfigError) as info:
        config.parse(doc)
    text = "\n".join(info.value.problems)
    assert "task/in_dim: 'in_dim' is a required property" in text
    assert "train/steps:" in text
    assert "adapters/1:" in text
    assert "<root>:" in text
    assert len(info.value.problems) == 4


def test_kind_semantics_checked():
    doc = json.loads(json.dumps(DOC))
    doc["adapters"] = [{"kind": "cersa", "alpha": 0.5, "beta": 0.9}]
    with pytest.raises(ConfigError, match="trainable threshold exceeds"):
        config.parse(doc)


def test_kind_count_mismatch():
    doc = json.loads(json.dumps(DOC))
    doc["model"]["hidden"] = [5, 4]
    with pytest.raises(ConfigError, match="3 layers"):
        config.parse(doc).model_spec()


def test_load_errors(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text("{\n  oops")
    with pytest.raises(ConfigError, match="line 2 column 3"):
        config.load(bad)
    with pytest.raises(ConfigError, match="cannot read"):
        config.load(tmp_path / "missing.json")


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "configs"
    paths = sorted(root.glob("*.json"))
    assert paths
    for path in paths:
        assert config.load(path).kinds
