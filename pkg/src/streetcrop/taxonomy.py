"""Crop/BBCH class codes and the class generalization table.

A class label is a three-letter crop code followed by a BBCH stage string,
e.g. ``WWH7`` or ``SBT39``.  Stages stay strings: two-digit sub-stages and
one-digit macro-stages coexist and are never compared numerically.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

CROP_NAMES: dict[str, str] = {
    "BSO": "Bare soil",
    "CAR": "Carrot",
    "GMA": "Green manure",
    "GRA": "Grassland",
    "GRS": "Grass seeds",
    "MAI": "Maize",
    "ONI": "Onion",
    "POT": "Potato",
    "SBA": "Summer barley",
    "SBT": "Sugar beet",
    "SCR": "Spring cereals",
    "SWH": "Spring wheat",
    "TLP": "Tulip",
    "VEG": "Vegetables",
    "WBA": "Winter barley",
    "WCR": "Winter cereals",
    "WWH": "Winter wheat",
    "OTH": "Other",
}
CROP_CODES = frozenset(CROP_NAMES)

BARE_SOIL = "BSO0"
OTHER = "OTH0"
# removed from the inference set and from every evaluation class set
NON_CROP_LABELS = frozenset({BARE_SOIL, OTHER})

_LABEL_RE = re.compile(r"^([A-Z]{3})([0-9]{1,2})$")


class LabelError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class ClassLabel:
    crop: str
    stage: str

    def __post_init__(self):
        if self.crop not in CROP_CODES:
            raise LabelError(f"unknown crop code {self.crop!r}")
        if not re.fullmatch(r"[0-9]{1,2}", self.stage):
            raise LabelError(f"malformed BBCH stage {self.stage!r}")

    def __str__(self) -> str:
        return self.crop + self.stage


def parse_label(text: str) -> ClassLabel:
    m = _LABEL_RE.match(text.strip())
    if m is None:
        raise LabelError(f"malformed class code {text!r}")
    return ClassLabel(m.group(1), m.group(2))


def crop_of(label: ClassLabel | str) -> str:
    if isinstance(label, str):
        label = parse_label(label)
    return label.crop


# new class -> old classes folded into it
_GENERALIZATION_ROWS: dict[str, tuple[str, ...]] = {
    "BSO0": ("BSO1", "BSO3", "BSO4", "BSO5", "BSO6", "ONI0", "POT0", "SBT0", "WWH0"),
    "GMA2": ("BSO2",),
    "GRA1": ("GRA2", "GRA3"),
    "ONI4": ("ONI41",),
    "ONI48": ("ONI45",),
    "SBT1": ("SBT11",),
    "WWH8": ("WWH9",),
}

DEFAULT_GENERALIZATIONS: dict[str, str] = {
    old: new for new, olds in _GENERALIZATION_ROWS.items() for old in olds
}


class GeneralizationTable:
    """Old label -> new label map; labels absent from the map are unchanged."""

    def __init__(self, mapping: Mapping[str, str] | None = None):
        mapping = DEFAULT_GENERALIZATIONS if mapping is None else mapping
        self._map = {str(parse_label(k)): str(parse_label(v)) for k, v in mapping.items()}
        chained = sorted(set(self._map.values()) & set(self._map))
        if chained:
            raise LabelError(f"generalization targets are also sources: {chained}")

    def __len__(self) -> int:
        return len(self._map)

    def items(self):
        return self._map.items()

    def generalize(self, label: ClassLabel | str) -> ClassLabel:
        text = str(label) if isinstance(label, ClassLabel) else str(parse_label(label))
        return parse_label(self._map.get(text, text))

    @classmethod
    def from_csv(cls, path: str | Path) -> "GeneralizationTable":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"old_label", "new_label"} <= set(reader.fieldnames):
                raise LabelError(f"{path}: expected columns old_label,new_label")
            return cls({row["old_label"]: row["new_label"] for row in reader})


DEFAULT_TABLE = GeneralizationTable()


def generalize(label: ClassLabel | str, table: GeneralizationTable | None = None) -> ClassLabel:
    return (table or DEFAULT_TABLE).generalize(label)


def sort_labels(labels: Iterable[str]) -> list[str]:
    """Canonical class order: by crop code, then numeric stage."""
    return sorted(set(labels), key=lambda s: (s[:3], int(s[3:]), s))


def evaluation_classes(training_classes: Iterable[str]) -> list[str]:
    """Training classes minus bare soil and 'other'."""
    return [c for c in sort_labels(training_classes) if c not in NON_CROP_LABELS]


def evaluation_crops(training_classes: Iterable[str]) -> list[str]:
    return sorted({crop_of(c) for c in evaluation_classes(training_classes)})
