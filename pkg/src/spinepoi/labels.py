"""Label dictionary: how integer codes in a volume map to (level, subregion).

Two grouping schemes are supported:

* ``blocks``  - vertebra ``v`` occupies the code block ``v * stride``; the
  code for a subregion is ``v * stride + subregion_code``. This is the
  package default (stride 100, subregion codes below), and is also what the
  instance-map composition in :mod:`spinepoi.io.nifti` produces.
* ``explicit`` - every (level, subregion) -> code entry is listed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .anatomy import Subregion, level_to_vid, vid_to_level
from .errors import LabelDictionaryError

__all__ = [
    "DEFAULT_SUBREGION_CODES",
    "DEFAULT_BLOCK_STRIDE",
    "ResolvedVertebra",
    "LabelDictionary",
    "default_dictionary",
    "read_label_dictionary",
    "write_label_dictionary",
]

# Subregion coding compatible with the SPINEPS family of segmentation tools.
DEFAULT_SUBREGION_CODES: dict[Subregion, int] = {
    Subregion.ARCUS: 41,
    Subregion.SPINOSUS: 42,
    Subregion.COSTAL_LEFT: 43,
    Subregion.COSTAL_RIGHT: 44,
    Subregion.SUP_ARTICULAR_LEFT: 45,
    Subregion.SUP_ARTICULAR_RIGHT: 46,
    Subregion.INF_ARTICULAR_LEFT: 47,
    Subregion.INF_ARTICULAR_RIGHT: 48,
    Subregion.CORPUS: 50,
}

DEFAULT_BLOCK_STRIDE = 100


@dataclass(frozen=True)
class ResolvedVertebra:
    """One vertebra group found in a volume: grouping key, optional declared
    level name, and the subregion -> code table."""

    key: int
    level: Optional[str]
    codes: Mapping[Subregion, int]


@dataclass(frozen=True)
class LabelDictionary:
    scheme: str = "blocks"
    subregion_codes: Mapping[Subregion, int] = field(
        default_factory=lambda: dict(DEFAULT_SUBREGION_CODES))
    block_stride: int = DEFAULT_BLOCK_STRIDE
    # blocks scheme: block index -> level name (defaults to canonical names).
    block_levels: Mapping[int, str] = field(default_factory=dict)
    # explicit scheme: one entry per vertebra.
    vertebrae: Sequence[Mapping] = ()
    ignore_codes: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.scheme not in ("blocks", "explicit"):
            raise LabelDictionaryError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "blocks":
            codes = dict(self.subregion_codes)
            if set(codes) != set(Subregion):
                missing = sorted(s.value for s in set(Subregion) - set(codes))
                raise LabelDictionaryError(f"blocks scheme must map all subregions; "
                                           f"missing {missing}")
            vals = list(codes.values())
            if len(set(vals)) != len(vals):
                raise LabelDictionaryError("subregion codes must be injective")
            if any(v < 1 or v >= self.block_stride for v in vals):
                raise LabelDictionaryError(
                    f"subregion codes must lie in [1, {self.block_stride})")
        else:
            seen_codes: set[int] = set()
            seen_levels: set[str] = set()
            for entry in self.vertebrae:
                level = entry.get("level")
                if level is not None:
                    if level in seen_levels:
                        raise LabelDictionaryError(f"duplicate level {level!r}")
                    level_to_vid(level)
                    seen_levels.add(level)
                for sub, code in entry["codes"].items():
                    Subregion(sub if isinstance(sub, str) else sub.value)
                    code = int(code)
                    if code < 1:
                        raise LabelDictionaryError(f"label code {code} must be >= 1")
                    if code in seen_codes:
                        raise LabelDictionaryError(
                            f"label code {code} declared for two subregions")
                    seen_codes.add(code)

    def code_for(self, v_id: int, subregion: Subregion) -> int:
        """Code the blocks scheme assigns to (v_id, subregion)."""
        if self.scheme != "blocks":
            raise LabelDictionaryError("code_for is only defined for the blocks scheme")
        return v_id * self.block_stride + self.subregion_codes[subregion]

    def resolve(self, present_codes: Iterable[int]) -> tuple[list[ResolvedVertebra], set[int]]:
        """Group the codes present in a volume into vertebra entries.

        Returns (groups ordered by grouping key, undeclared leftover codes).
        """
        present = {int(c) for c in present_codes}
        present -= set(self.ignore_codes)
        if self.scheme == "blocks":
            return self._resolve_blocks(present)
        return self._resolve_explicit(present)

    def _resolve_blocks(self, present: set[int]):
        sub_by_code = {code: sub for sub, code in self.subregion_codes.items()}
        groups: dict[int, dict[Subregion, int]] = {}
        unassigned: set[int] = set()
        for code in sorted(present):
            block, rest = divmod(code, self.block_stride)
            sub = sub_by_code.get(rest)
            if block < 1 or sub is None:
                unassigned.add(code)
                continue
            groups.setdefault(block, {})[sub] = code
        resolved = []
        for block in sorted(groups):
            level = self.block_levels.get(block)
            if level is None:
                level = vid_to_level(block)
            resolved.append(ResolvedVertebra(key=block, level=level,
                                             codes=groups[block]))
        return resolved, unassigned

    def _resolve_explicit(self, present: set[int]):
        resolved = []
        claimed: set[int] = set()
        for i, entry in enumerate(self.vertebrae):
            codes = {Subregion(s if isinstance(s, str) else s.value): int(c)
                     for s, c in entry["codes"].items()}
            found = {sub: code for sub, code in codes.items() if code in present}
            claimed |= set(found.values())
            if found:
                resolved.append(ResolvedVertebra(key=i, level=entry.get("level"),
                                                 codes=found))
        return resolved, present - claimed


def default_dictionary() -> LabelDictionary:
    return LabelDictionary()


def read_label_dictionary(path) -> LabelDictionary:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        scheme = doc.get("scheme", "blocks")
        if scheme == "blocks":
            subs = doc.get("subregions")
            codes = (
                {Subregion(k): int(v) for k, v in subs.items()}
                if subs else dict(DEFAULT_SUBREGION_CODES)
            )
            return LabelDictionary(
                scheme="blocks",
                subregion_codes=codes,
                block_stride=int(doc.get("block_stride", DEFAULT_BLOCK_STRIDE)),
                block_levels={int(k): str(v) for k, v in doc.get("levels", {}).items()},
                ignore_codes=frozenset(int(c) for c in doc.get("ignore_codes", ())),
            )
        if scheme == "explicit":
            return LabelDictionary(
                scheme="explicit",
                vertebrae=tuple(doc["vertebrae"]),
                ignore_codes=frozenset(int(c) for c in doc.get("ignore_codes", ())),
            )
        raise LabelDictionaryError(f"unknown scheme {scheme!r}")
    except (KeyError, TypeError, ValueError) as exc:
        raise LabelDictionaryError(f"malformed label dictionary {path}: {exc}") from exc


def write_label_dictionary(d: LabelDictionary, path) -> None:
    if d.scheme == "blocks":
        doc = {
            "format": "spinepoi-labels",
            "scheme": "blocks",
            "block_stride": d.block_stride,
            "subregions": {s.value: c for s, c in d.subregion_codes.items()},
            "levels": {str(k): v for k, v in d.block_levels.items()},
            "ignore_codes": sorted(d.ignore_codes),
        }
    else:
        doc = {
            "format": "spinepoi-labels",
            "scheme": "explicit",
            "vertebrae": [
                {"level": e.get("level"),
                 "codes": {(s if isinstance(s, str) else s.value): int(c)
                           for s, c in e["codes"].items()}}
                for e in d.vertebrae
            ],
            "ignore_codes": sorted(d.ignore_codes),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
