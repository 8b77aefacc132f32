"""Native POI JSON documents: versioned, field order fixed, floats written
as shortest exact decimals so the round trip is lossless."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import FormatError, VersionError
from ..grid import AffineFrame, Convention
from ..orientation import LocalFrame
from ..poi import Landmark, PoiSet, Skip

__all__ = ["poi_document", "truth_document", "write_poi_json", "read_poi_json"]

FORMAT = "spinepoi-poi"
VERSION = 1


def _jsonable(x):
    """Plain-python mirror of nested values; floats stay exact (json emits
    the shortest decimal that round-trips to the same double)."""
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    return x


def _frame_dict(fr: LocalFrame) -> dict:
    return {
        "origin": list(fr.origin),
        "superior": list(fr.superior),
        "posterior": list(fr.posterior),
        "lateral": list(fr.lateral),
    }


def poi_document(pois: PoiSet, role: str = "pois") -> dict:
    vert = []
    for v_id in pois.v_ids():
        entry = {"v_id": v_id, "level": pois.levels.get(v_id)}
        fr = pois.frames.get(v_id)
        if fr is not None:
            entry["frame"] = _frame_dict(fr)
        vert.append(entry)
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "role": role,
        "convention": pois.convention.value,
        "space": pois.space,
        "vertebrae": vert,
        "entries": [
            {"v_id": v_id, "level": pois.levels.get(v_id), "name": lm.value,
             "position": list(p)}
            for v_id, lm, p in pois.iter_entries()
        ],
        "skips": [{"v_id": s.v_id, "name": s.name, "reason": s.reason}
                  for s in pois.skips],
        "notes": list(pois.notes),
    }
    if pois.space == "voxel":
        doc["grid"] = [list(row) for row in pois.grid.matrix]
    return _jsonable(doc)


def truth_document(truth, pois_convention=None) -> dict:
    """Phantom ground truth in the POI JSON family, role-tagged "truth"."""
    pois = PoiSet(convention=truth.convention)
    for vt in truth.vertebrae:
        pois.levels[vt.v_id] = vt.level
        pois.frames[vt.v_id] = vt.frame
        for lm, p in vt.landmarks.items():
            pois.add(vt.v_id, lm, p)
    doc = poi_document(pois, role="truth")
    tangents = {vt.v_id: list(vt.tangent) for vt in truth.vertebrae}
    for entry in doc["vertebrae"]:
        entry["tangent"] = _jsonable(tangents[entry["v_id"]])
    return doc


def write_poi_json(pois: PoiSet, path) -> dict:
    doc = poi_document(pois)
    _dump(doc, path)
    return doc


def _dump(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_poi_json(path) -> PoiSet:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise FormatError(f"{path}: not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise VersionError(f"{path}: unsupported version {doc.get('version')!r}")
    space = doc.get("space", "world")
    grid = None
    if space == "voxel":
        if "grid" not in doc:
            raise FormatError(f"{path}: voxel-space document lacks its grid")
        grid = AffineFrame(np.array(doc["grid"], dtype=float),
                           Convention(doc["convention"]))
    pois = PoiSet(convention=Convention(doc["convention"]), space=space, grid=grid)
    for entry in doc.get("vertebrae", ()):
        v_id = int(entry["v_id"])
        if entry.get("level"):
            pois.levels[v_id] = entry["level"]
        fr = entry.get("frame")
        if fr is not None:
            pois.frames[v_id] = LocalFrame(
                origin=np.array(fr["origin"], dtype=float),
                superior=np.array(fr["superior"], dtype=float),
                posterior=np.array(fr["posterior"], dtype=float),
                lateral=np.array(fr["lateral"], dtype=float),
            )
    for entry in doc.get("entries", ()):
        try:
            lm = Landmark(entry["name"])
        except ValueError:
            raise FormatError(f"{path}: unknown landmark name {entry['name']!r}") from None
        key = (int(entry["v_id"]), lm)
        if key in pois.entries:
            raise FormatError(f"{path}: duplicate landmark {entry['v_id']}/{entry['name']}")
        pois.entries[key] = np.array(entry["position"], dtype=float)
        if entry.get("level"):
            pois.levels.setdefault(int(entry["v_id"]), entry["level"])
    for s in doc.get("skips", ()):
        pois.skips.append(Skip(int(s["v_id"]), s["name"], s["reason"]))
    pois.notes.extend(doc.get("notes", ()))
    return pois
