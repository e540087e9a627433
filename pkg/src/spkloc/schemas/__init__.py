"""JSON schemas for scenario files, batch manifests and pipeline configs."""
import json
from functools import lru_cache
from importlib import resources

import jsonschema


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    return json.loads(resources.files(__name__).joinpath(f"{name}.schema.json").read_text())


def _validate(doc, name):
    try:
        jsonschema.validate(doc, load_schema(name))
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ValueError(f"invalid {name} document at {path}: {e.message}") from None


def validate_scenario(doc: dict) -> None:
    _validate(doc, "scenario")


def validate_manifest(doc: dict) -> None:
    _validate(doc, "manifest")


def validate_config(doc: dict) -> None:
    _validate(doc, "config")
