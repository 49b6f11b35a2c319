"""Versioned JSON model files.

A model file holds the hybrid model (physics block with its turbine
constants, residual block, scaling statistics), the data-driven baseline,
optional quantile heads, the explanation background and free-form
metadata. Keys are sorted and floats written with ``repr`` so the same
parameters always produce the same bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conformal import QuantileHeads
from .explain import BackgroundSet
from .hybrid import DataDrivenModel, HybridModel

FORMAT = "hybridwind-model"
VERSION = 1


class ModelFileError(ValueError):
    """Unreadable, foreign or incompatible model file."""


@dataclass(eq=False)
class ModelBundle:
    hybrid: HybridModel
    data_driven: DataDrivenModel | None = None
    heads: QuantileHeads | None = None
    background: BackgroundSet | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "hybrid": self.hybrid.to_dict(),
            "data_driven": None if self.data_driven is None else self.data_driven.to_dict(),
            "heads": None if self.heads is None else self.heads.to_dict(),
            "background": None if self.background is None else {
                "records": self.background.records.tolist(), "seed": self.background.seed},
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if d.get("format") != FORMAT:
            raise ModelFileError("not a hybridwind model file")
        if d.get("version") != VERSION:
            raise ModelFileError(f"unsupported model file version {d.get('version')!r} (expected {VERSION})")
        try:
            hybrid = HybridModel.from_dict(d["hybrid"])
            dd = d.get("data_driven")
            heads = d.get("heads")
            bg = d.get("background")
            return cls(
                hybrid=hybrid,
                data_driven=None if dd is None else DataDrivenModel.from_dict(dd),
                heads=None if heads is None else QuantileHeads.from_dict(heads, hybrid),
                background=None if bg is None else BackgroundSet(np.array(bg["records"]), bg["seed"]),
                metadata=d.get("metadata", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFileError(f"malformed model file: {exc}") from exc


def save_model(bundle: ModelBundle, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(bundle.to_dict(), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path: str | Path) -> ModelBundle:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"model file {path} is not valid JSON: {exc}") from exc
    return ModelBundle.from_dict(doc)
