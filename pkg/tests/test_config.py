import json

import pytest

from mb2l.config import load_run_config, parse_run_config, resolved_document
from mb2l.errors import InvalidParameterError


def minimal(**extra):
    doc = {"data": {"path": "dataset"}}
    doc.update(extra)
    return doc


def test_minimal_config():
    rc = parse_run_config(minimal())
    assert rc.data_path == "dataset"
    assert rc.channels is None
    assert rc.model_overrides == {}
    assert rc.train_preset is None
    assert rc.out_dir is None


def test_preset_expansion():
    rc = parse_run_config(minimal(train={"preset": "paper-intra"}))
    assert rc.train.resolved_alpha_high == 0.5
    assert rc.train.batch_size == 256
    rc = parse_run_config(minimal(train={"preset": "paper-inter"}))
    assert rc.train.resolved_alpha_high == 0.1


def test_explicit_keys_override_preset():
    rc = parse_run_config(minimal(train={"preset": "paper-intra", "epochs": 3}))
    assert rc.train.epochs == 3
    assert rc.train.batch_size == 256  # untouched preset value survives


def test_model_section_passthrough():
    rc = parse_run_config(minimal(model={"token_dim": 8, "abvp_on": False, "tau": 0.5}))
    assert rc.model_overrides == {"token_dim": 8, "abvp_on": False, "tau": 0.5}


def test_channels_become_tuple():
    rc = parse_run_config(minimal(data={"path": "d", "channels": ["O1", "Oz"]}))
    assert rc.channels == ("O1", "Oz")


def test_output_dir():
    rc = parse_run_config(minimal(output={"dir": "runs/a"}))
    assert rc.out_dir == "runs/a"


@pytest.mark.parametrize(
    "doc,fragment",
    [
        ({"extra": {}}, "extra: unknown section"),
        (minimal(train={"batchsize": 4}), "train.batchsize: unknown key"),
        (minimal(model={"n_samples": 8}), "model.n_samples: unknown key"),
        (minimal(train={"epochs": "ten"}), "train.epochs: expected integer"),
        (minimal(train={"epochs": True}), "train.epochs: expected integer"),
        (minimal(train={"learning_rate": "fast"}), "train.learning_rate: expected number"),
        (minimal(data={"path": 7}), "data.path: expected string"),
        (minimal(data={"path": "d", "channels": [1, 2]}), "data.channels"),
        ({"data": {}}, "data.path: required"),
        ({"data": []}, "data: expected an object"),
    ],
)
def test_schema_violations_name_the_field(doc, fragment):
    with pytest.raises(InvalidParameterError, match=fragment.replace(".", r"\.")):
        parse_run_config(doc)


def test_root_must_be_object():
    with pytest.raises(InvalidParameterError, match="root"):
        parse_run_config(["data"])


def test_value_errors_still_checked():
    # the schema layer passes types through; range checks live in the
    # config dataclasses and still fire
    with pytest.raises(InvalidParameterError):
        parse_run_config(minimal(train={"epochs": 0}))
    with pytest.raises(InvalidParameterError):
        parse_run_config(minimal(train={"preset": "warp-speed"}))
    with pytest.raises(InvalidParameterError):
        parse_run_config(minimal(train={"mode": "cross_species"}))


def test_load_missing_file(tmp_path):
    with pytest.raises(InvalidParameterError, match="not found"):
        load_run_config(tmp_path / "absent.json")


def test_load_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(InvalidParameterError, match="not valid JSON"):
        load_run_config(path)


def test_load_round_trip(tmp_path):
    doc = minimal(
        model={"token_dim": 16},
        train={"preset": "desk", "epochs": 5},
        output={"dir": "out"},
    )
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    rc = load_run_config(path)
    assert rc.train.epochs == 5
    assert rc.model_overrides == {"token_dim": 16}


def test_resolved_document_expands_preset():
    rc = parse_run_config(minimal(train={"preset": "paper-intra"}))
    doc = resolved_document(rc)
    assert doc["train"]["alpha_high"] == 0.5
    assert doc["train"]["preset"] == "paper-intra"
    assert doc["train"]["batch_size"] == 256
    # the resolved document is itself a valid config
    rc2 = parse_run_config(doc)
    assert rc2.train.resolved_alpha_high == 0.5


def test_resolved_document_without_preset():
    rc = parse_run_config(minimal(train={"mode": "inter_subject"}))
    doc = resolved_document(rc)
    assert "preset" not in doc["train"]
    assert doc["train"]["alpha_high"] == 0.1
