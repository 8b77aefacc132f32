"""3D Slicer markups export: one Fiducial markup per vertebra, positions in
LPS mm, labels "<level>_<landmark-name>"."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..grid import Convention, convert_convention
from ..poi import PoiSet, retarget

__all__ = ["export_slicer", "read_slicer_points"]

SCHEMA_URL = ("https://raw.githubusercontent.com/slicer/slicer/master/Modules/"
              "Loadable/Markups/Resources/Schema/markups-schema-v1.0.3.json#")

_IDENTITY9 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]


def export_slicer(pois: PoiSet, path=None) -> dict:
    """Build (and optionally write) a markups document for the landmark set."""
    world = retarget(pois, Convention.LPS)
    markups = []
    for v_id in world.v_ids():
        points = [(lm, p) for w, lm, p in world.iter_entries() if w == v_id]
        if not points:
            continue
        level = world.levels.get(v_id, f"v{v_id}")
        control_points = [
            {
                "id": str(i + 1),
                "label": f"{level}_{lm.value}",
                "position": [float(x) for x in p],
                "orientation": list(_IDENTITY9),
                "selected": True,
                "visibility": True,
            }
            for i, (lm, p) in enumerate(points)
        ]
        markups.append({
            "type": "Fiducial",
            "name": level,
            "coordinateSystem": "LPS",
            "coordinateUnits": "mm",
            "locked": False,
            "labelFormat": "%N-%d",
            "controlPoints": control_points,
        })
    doc = {"@schema": SCHEMA_URL, "markups": markups}
    if path is not None:
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return doc


def read_slicer_points(path, convention: Convention = Convention.RAS) -> dict[str, np.ndarray]:
    """Control points of a markups file as {label: position} in the requested
    convention (markups positions are stored in the file's coordinateSystem)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    out: dict[str, np.ndarray] = {}
    for markup in doc.get("markups", ()):
        system = markup.get("coordinateSystem", "LPS")
        try:
            src = Convention(system)
        except ValueError:
            raise FormatError(f"{path}: unsupported coordinateSystem {system!r}") from None
        for cp in markup.get("controlPoints", ()):
            label = cp["label"]
            if label in out:
                raise FormatError(f"{path}: duplicate control point label {label!r}")
            p = np.array(cp["position"], dtype=float)
            out[label] = convert_convention(p, src, convention)
    return out
