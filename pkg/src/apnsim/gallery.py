"""Models shipped with the package (``apnsim/models/*.apn``)."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .model import Net
from .modelio import Document, load_document


def names() -> list[str]:
    root = resources.files(__package__).joinpath("models")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".apn"))


def path(name: str) -> Path:
    p = resources.files(__package__).joinpath("models", name + ".apn")
    if not p.is_file():
        raise FileNotFoundError(f"no bundled model named {name!r}")
    return Path(str(p))


def document(name: str) -> Document:
    return load_document(path(name))


def load(name: str) -> Net:
    return document(name).net
