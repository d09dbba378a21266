"""Crisis windows and their mapping onto a trading calendar."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataFormatError, InputError

CATEGORIES = ("Conventional", "Novel")
EXTENSION_DAYS = 10
DEFAULT_SINCE = "2000-01-01"


@dataclass(frozen=True)
class CrisisWindow:
    name: str
    start: np.datetime64
    end: np.datetime64
    category: str = "Conventional"

    def __post_init__(self):
        object.__setattr__(self, "start", np.datetime64(self.start, "D"))
        object.__setattr__(self, "end", np.datetime64(self.end, "D"))
        if not self.start < self.end:
            raise InputError(f"crisis {self.name!r}: start must precede end")
        if self.category not in CATEGORIES:
            raise InputError(f"crisis {self.name!r}: unknown category {self.category!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start"], d["end"] = str(self.start), str(self.end)
        return d

    def indices(self, dates, extension: int = EXTENSION_DAYS) -> tuple[int, int] | None:
        """Inclusive row range of the window extended by ``extension`` trading
        days each side and clipped to the calendar; None if disjoint."""
        dates = np.asarray(dates, dtype="datetime64[D]")
        lo = int(np.searchsorted(dates, self.start, side="left"))
        hi = int(np.searchsorted(dates, self.end, side="right")) - 1
        if hi < lo:
            return None
        return max(lo - extension, 0), min(hi + extension, len(dates) - 1)


def load_crises(path=None, since: str | None = DEFAULT_SINCE) -> list[CrisisWindow]:
    """Read crisis windows from JSON (``{"crises": [...]}`` or a bare list).

    Without ``path`` the bundled table is used.  Windows starting before
    ``since`` are dropped; pass ``since=None`` to keep all of them.
    """
    if path is None:
        text = resources.files("qgeo_regime").joinpath("data/crises.json").read_text()
        where = "bundled crises.json"
    else:
        path = Path(path)
        if not path.exists():
            raise InputError(f"{path}: crisis file not found")
        text = path.read_text()
        where = str(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{where}: {exc}") from None
    items = doc.get("crises", []) if isinstance(doc, dict) else doc
    try:
        out = [CrisisWindow(d["name"], d["start"], d["end"], d.get("category", "Conventional")) for d in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{where}: malformed crisis entry ({exc})") from None
    if since is not None:
        out = [c for c in out if c.start >= np.datetime64(since, "D")]
    if not out:
        raise InputError(f"{where}: no crisis windows")
    return sorted(out, key=lambda c: (c.start, c.name))


def save_crises(crises, path) -> None:
    Path(path).write_text(json.dumps({"crises": [c.to_dict() for c in crises]}, indent=2))


def crisis_ranges(dates, crises, extension: int = EXTENSION_DAYS) -> list[tuple[int, int]]:
    """Extended inclusive row ranges of the windows that touch the calendar."""
    out = []
    for c in crises:
        r = c.indices(dates, extension)
        if r is not None:
            out.append(r)
    return out


def crisis_mask(dates, crises, extension: int = EXTENSION_DAYS) -> np.ndarray:
    mask = np.zeros(len(dates), dtype=bool)
    for lo, hi in crisis_ranges(dates, crises, extension):
        mask[lo : hi + 1] = True
    return mask
