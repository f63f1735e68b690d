"""Published JSON schemas for every document the tools emit."""

import json
from importlib import resources

SCHEMA_NAMES = ("codebook", "downlink", "uplink", "selection")


def load_schema(name: str) -> dict:
    if name not in SCHEMA_NAMES:
        raise KeyError(f"no schema named {name!r}; known: {SCHEMA_NAMES}")
    ref = resources.files(__package__).joinpath(f"{name}.schema.json")
    return json.loads(ref.read_text(encoding="utf-8"))
