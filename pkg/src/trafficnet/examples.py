"""Bundled example networks."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .network import Network, load_network

BUNDLED = ("example1", "example2", "freeway")


def load_example(name: str) -> Network:
    """Load a bundled network by name (``"example2"`` or ``"example2.json"``)."""
    stem = Path(name).stem
    if stem not in BUNDLED:
        raise KeyError(f"no bundled network {name!r}; choose from {BUNDLED}")
    text = resources.files("trafficnet.data").joinpath(f"{stem}.json").read_text()
    net = Network.from_dict(json.loads(text))
    return net


def resolve_network(path_or_name: str) -> Network:
    """Load from a file path, falling back to the bundled examples."""
    p = Path(path_or_name)
    if p.exists():
        return load_network(p)
    if p.stem in BUNDLED and p.parent == Path("."):
        return load_example(p.stem)
    raise FileNotFoundError(path_or_name)
