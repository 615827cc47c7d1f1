"""Bundled benchmark tables.

``flare``, ``spect`` and ``mushroom`` ship with the package.  ``yeast`` (the
14 label columns of the multi-label yeast data) is not redistributable here;
point ``MARGINIMPUTE_YEAST`` at a CSV of its label columns to enable it.
"""
from __future__ import annotations

import os
from importlib import resources

from .table import CategoricalTable, load_csv

BUNDLED = ("flare", "spect", "mushroom")
YEAST_ENV = "MARGINIMPUTE_YEAST"


class DatasetUnavailable(LookupError):
    pass


def available() -> list[str]:
    names = list(BUNDLED)
    if os.environ.get(YEAST_ENV):
        names.append("yeast")
    return names


def load(name: str) -> CategoricalTable:
    name = name.lower()
    if name in BUNDLED:
        ref = resources.files(__package__).joinpath("data", f"{name}.csv")
        with ref.open("r", encoding="utf-8", newline="") as fh:
            return load_csv(fh)
    if name == "yeast":
        path = os.environ.get(YEAST_ENV)
        if not path:
            raise DatasetUnavailable(
                f"yeast is not bundled; set {YEAST_ENV} to a CSV of its 14 label columns")
        return load_csv(path)
    raise DatasetUnavailable(f"unknown dataset {name!r}; choose from {BUNDLED + ('yeast',)}")
