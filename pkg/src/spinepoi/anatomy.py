"""Subregion taxonomy, per-vertebra instances, centers of mass, and the
centerline spline through vertebral-body centers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, TYPE_CHECKING

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    DegenerateCenterline,
    EmptySpine,
    EmptySubregion,
    InsufficientVertebrae,
    LabelDictionaryError,
)
from .grid import Convention, LabelVolume, voxel_to_world

if TYPE_CHECKING:  # pragma: no cover
    from .labels import LabelDictionary

log = logging.getLogger(__name__)

__all__ = [
    "Subregion",
    "POSTERIOR_SUBREGIONS",
    "LEVEL_NAMES",
    "level_to_vid",
    "vid_to_level",
    "VertebraInstance",
    "SpineInstance",
    "CenterlineSpline",
    "center_of_mass",
    "fit_centerline",
    "craniocaudal_axis",
    "assemble_spine",
]


class Subregion(str, Enum):
    CORPUS = "corpus"
    ARCUS = "arcus"
    SPINOSUS = "spinosus"
    COSTAL_LEFT = "costal_left"
    COSTAL_RIGHT = "costal_right"
    SUP_ARTICULAR_LEFT = "sup_articular_left"
    SUP_ARTICULAR_RIGHT = "sup_articular_right"
    INF_ARTICULAR_LEFT = "inf_articular_left"
    INF_ARTICULAR_RIGHT = "inf_articular_right"


# Every non-corpus subregion sits posterior to the vertebral body.
POSTERIOR_SUBREGIONS = tuple(s for s in Subregion if s is not Subregion.CORPUS)

# Canonical levels, craniad to caudad. v_id counts from C1 = 1.
LEVEL_NAMES = tuple(
    [f"C{i}" for i in range(1, 8)]
    + [f"T{i}" for i in range(1, 13)]
    + [f"L{i}" for i in range(1, 6)]
    + [f"S{i}" for i in range(1, 6)]
)
_LEVEL_TO_VID = {name: i + 1 for i, name in enumerate(LEVEL_NAMES)}


def level_to_vid(level: str) -> int:
    try:
        return _LEVEL_TO_VID[level.upper()]
    except KeyError:
        raise LabelDictionaryError(f"unknown level name {level!r}") from None


def vid_to_level(v_id: int) -> str:
    if not 1 <= v_id <= len(LEVEL_NAMES):
        raise LabelDictionaryError(f"v_id {v_id} outside the canonical level table")
    return LEVEL_NAMES[v_id - 1]


def center_of_mass(vol: LabelVolume, label_set: Iterable[int]) -> np.ndarray:
    """Unweighted mean of the world coordinates of all matching voxel centers."""
    codes = set(int(c) for c in label_set)
    idx = np.argwhere(np.isin(vol.labels, np.fromiter(codes, dtype=vol.labels.dtype)))
    if idx.shape[0] == 0:
        raise EmptySubregion(f"no voxels carry any label in {sorted(codes)}")
    return voxel_to_world(vol.frame, idx.astype(float)).mean(axis=0)


def _code_stats(labels: np.ndarray) -> dict[int, tuple[int, np.ndarray]]:
    """Per-code voxel count and voxel-index sum, one pass over the volume."""
    nz = np.nonzero(labels)
    vals = labels[nz].astype(np.int64)
    if vals.size == 0:
        return {}
    n = int(vals.max()) + 1
    counts = np.bincount(vals, minlength=n)
    sums = np.stack(
        [np.bincount(vals, weights=nz[ax].astype(float), minlength=n) for ax in range(3)],
        axis=1,
    )
    return {int(c): (int(counts[c]), sums[c]) for c in np.nonzero(counts)[0]}


@dataclass(frozen=True)
class VertebraInstance:
    """One vertebra: identity, subregion label codes, and cached mask moments."""

    v_id: int
    level: str
    codes: Mapping[Subregion, int]
    volume: LabelVolume
    _stats: Mapping[int, tuple[int, np.ndarray]] = field(repr=False, compare=False, default_factory=dict)

    def label_codes(self, *subregions: Subregion) -> set[int]:
        return {self.codes[s] for s in subregions if s in self.codes}

    def voxel_count(self, *subregions: Subregion) -> int:
        return sum(self._stats[c][0] for c in self.label_codes(*subregions) if c in self._stats)

    def has(self, *subregions: Subregion) -> bool:
        return self.voxel_count(*subregions) > 0

    def center_of_mass(self, *subregions: Subregion) -> np.ndarray:
        """World CMS over the union of the given subregion masks."""
        total = 0
        acc = np.zeros(3)
        for c in self.label_codes(*subregions):
            if c in self._stats:
                cnt, s = self._stats[c]
                total += cnt
                acc = acc + s
        if total == 0:
            names = ", ".join(s.value for s in subregions)
            raise EmptySubregion(f"{self.level}: empty subregion(s) {names}")
        return voxel_to_world(self.volume.frame, acc / total)

    def world_voxel_centers(self, *subregions: Subregion) -> np.ndarray:
        """World coordinates of every voxel center in the union, (n, 3)."""
        codes = self.label_codes(*subregions)
        if not codes:
            return np.empty((0, 3))
        idx = np.argwhere(
            np.isin(self.volume.labels, np.fromiter(codes, dtype=self.volume.labels.dtype))
        )
        return voxel_to_world(self.volume.frame, idx.astype(float))


class CenterlineSpline:
    """Natural cubic spline through vertebral-body centers on a cumulative
    chord-length parameter. Two points degenerate to the straight segment.
    """

    def __init__(self, control_points: np.ndarray):
        pts = np.asarray(control_points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise InsufficientVertebrae(
                f"centerline needs at least 2 points, got {pts.shape}"
            )
        chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(chords < 1e-9):
            raise DegenerateCenterline("duplicate consecutive centerline points")
        params = np.concatenate([[0.0], np.cumsum(chords)])
        self.control_points = pts
        self.params = params
        self._spline = CubicSpline(params, pts, bc_type="natural")
        self._derivative = self._spline.derivative()

    def __len__(self) -> int:
        return len(self.params)

    def point(self, t: float) -> np.ndarray:
        return np.asarray(self._spline(t), dtype=float)

    def derivative(self, t: float) -> np.ndarray:
        return np.asarray(self._derivative(t), dtype=float)

    def tangent_at_control(self, k: int) -> np.ndarray:
        return self.derivative(self.params[k])


def fit_centerline(points) -> CenterlineSpline:
    """Fit the cranio-caudal centerline through ordered vertebral-body centers."""
    return CenterlineSpline(points)


def craniocaudal_axis(spline: CenterlineSpline, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit (up, down) pair at control point k. Control points run craniad to
    caudad, so the spline derivative points caudad (down)."""
    d = spline.tangent_at_control(k)
    n = np.linalg.norm(d)
    if n < 1e-12:
        raise DegenerateCenterline(f"zero tangent at control point {k}")
    down = d / n
    return -down, down


# World superior axis: +z in both RAS and LPS.
_WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class SpineInstance:
    """Ordered vertebrae sharing one label volume plus the fitted centerline."""

    volume: LabelVolume
    vertebrae: tuple[VertebraInstance, ...]
    centerline: CenterlineSpline | None
    notes: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.vertebrae)

    def craniocaudal(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(up, down) for vertebra index k, from the centerline tangent or the
        world superior axis for single-vertebra inputs."""
        if self.centerline is None:
            return _WORLD_UP.copy(), -_WORLD_UP
        return craniocaudal_axis(self.centerline, k)


def _principal_direction(points: np.ndarray) -> np.ndarray:
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    u = vt[0]
    # Orient superior so that "descending projection" means craniad->caudad.
    if abs(u[2]) > 1e-9:
        return u if u[2] > 0 else -u
    return u if u.sum() > 0 else -u


def assemble_spine(vol: LabelVolume, dictionary: "LabelDictionary") -> SpineInstance:
    """Group the volume's labels into vertebra instances, order them craniad
    to caudad, and fit the centerline through their corpus centers.
    """
    present = vol.present_codes()
    groups, unassigned = dictionary.resolve(present)
    notes: list[str] = []
    if unassigned:
        notes.append(f"ignored {len(unassigned)} undeclared label code(s): "
                     f"{sorted(int(c) for c in unassigned)[:12]}")
        log.warning(notes[-1])

    stats = _code_stats(vol.labels)

    usable = []
    for g in groups:
        corpus_code = g.codes.get(Subregion.CORPUS)
        if corpus_code is None or corpus_code not in stats:
            notes.append(f"dropped vertebra group {g.key}: no corpus voxels")
            log.warning(notes[-1])
            continue
        usable.append(g)
    if not usable:
        raise EmptySpine("volume contains no corpus voxels for any declared vertebra")

    frame = vol.frame
    cms = np.array([
        voxel_to_world(frame, stats[g.codes[Subregion.CORPUS]][1]
                       / stats[g.codes[Subregion.CORPUS]][0])
        for g in usable
    ])

    if len(usable) > 1:
        u = _principal_direction(cms)
        order = np.argsort(-(cms @ u), kind="stable")
    else:
        order = np.array([0])
    usable = [usable[i] for i in order]
    cms = cms[order]

    declared = [g.level for g in usable]
    if all(lv is not None for lv in declared):
        v_ids = [level_to_vid(lv) for lv in declared]
        if any(b <= a for a, b in zip(v_ids, v_ids[1:])):
            raise LabelDictionaryError(
                "declared level names are not strictly increasing in the "
                f"cranio-caudal order of corpus centers: {declared}"
            )
        levels = [lv.upper() for lv in declared]
    elif all(lv is None for lv in declared):
        v_ids = list(range(1, len(usable) + 1))
        levels = [vid_to_level(v) for v in v_ids]
    else:
        raise LabelDictionaryError(
            "level names must be declared for all vertebrae or none"
        )

    vertebrae = tuple(
        VertebraInstance(v_id=v, level=lv, codes=dict(g.codes), volume=vol, _stats=stats)
        for g, v, lv in zip(usable, v_ids, levels)
    )

    if len(vertebrae) >= 2:
        centerline = fit_centerline(cms)
    else:
        centerline = None
        notes.append("single vertebra: cranio-caudal axis falls back to the "
                     "world superior axis")
        log.info(notes[-1])

    return SpineInstance(volume=vol, vertebrae=vertebrae, centerline=centerline,
                         notes=tuple(notes))
