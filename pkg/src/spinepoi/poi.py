"""Point-of-interest computation: raycast process tips and corpus cardinal
points, sub-voxel corner bisection, ligamentum-flavum landmarks, lateral
shifts, full-spine assembly, and exact retargeting.

All searches run in world mm against trilinear occupancy fields, so results
are independent of voxel spacing and grid orientation. Per-vertebra failures
are recorded as skips and never abort the rest of the spine.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Optional

import numpy as np

from .anatomy import SpineInstance, Subregion, VertebraInstance
from .errors import (
    BisectionDiverged,
    BisectionStartOutside,
    ConfigError,
    DegenerateOrientation,
    EmptySubregion,
    InvalidFrame,
    RayMiss,
    RayOriginOutside,
)
from .grid import (
    AffineFrame,
    Convention,
    INSIDE_THRESHOLD,
    LabelVolume,
    OccupancyField,
    convert_convention,
)
from .orientation import LocalFrame, OrientationMethod, build_frame, orthogonalize, posterior_raw

log = logging.getLogger(__name__)

__all__ = [
    "Landmark",
    "BisectionConfig",
    "RayConfig",
    "ExtractConfig",
    "Skip",
    "PoiSet",
    "raycast_surface_point",
    "corner_bisection_2d",
    "process_tip_pois",
    "corpus_cardinal_pois",
    "corpus_corners",
    "flavum_points",
    "shift_factor",
    "lateral_shift_mm",
    "shifted_pois",
    "extract_all",
    "retarget",
]


class Landmark(str, Enum):
    SPINOSUS_TIP = "spinosus_tip"
    COSTAL_TIP_LEFT = "costal_tip_left"
    COSTAL_TIP_RIGHT = "costal_tip_right"
    SUP_ARTICULAR_TIP_LEFT = "sup_articular_tip_left"
    SUP_ARTICULAR_TIP_RIGHT = "sup_articular_tip_right"
    INF_ARTICULAR_TIP_LEFT = "inf_articular_tip_left"
    INF_ARTICULAR_TIP_RIGHT = "inf_articular_tip_right"
    CORPUS_SUP = "corpus_sup"
    CORPUS_INF = "corpus_inf"
    CORPUS_ANT = "corpus_ant"
    CORPUS_POST = "corpus_post"
    CORPUS_LEFT = "corpus_left"
    CORPUS_RIGHT = "corpus_right"
    CORNER_SUP_ANT = "corner_sup_ant"
    CORNER_SUP_POST = "corner_sup_post"
    CORNER_INF_ANT = "corner_inf_ant"
    CORNER_INF_POST = "corner_inf_post"
    CORNER_SUP_ANT_SHIFTED_LEFT = "corner_sup_ant_shifted_left"
    CORNER_SUP_ANT_SHIFTED_RIGHT = "corner_sup_ant_shifted_right"
    CORNER_SUP_POST_SHIFTED_LEFT = "corner_sup_post_shifted_left"
    CORNER_SUP_POST_SHIFTED_RIGHT = "corner_sup_post_shifted_right"
    CORNER_INF_ANT_SHIFTED_LEFT = "corner_inf_ant_shifted_left"
    CORNER_INF_ANT_SHIFTED_RIGHT = "corner_inf_ant_shifted_right"
    CORNER_INF_POST_SHIFTED_LEFT = "corner_inf_post_shifted_left"
    CORNER_INF_POST_SHIFTED_RIGHT = "corner_inf_post_shifted_right"
    CORPUS_SUP_SHIFTED_LEFT = "corpus_sup_shifted_left"
    CORPUS_SUP_SHIFTED_RIGHT = "corpus_sup_shifted_right"
    CORPUS_INF_SHIFTED_LEFT = "corpus_inf_shifted_left"
    CORPUS_INF_SHIFTED_RIGHT = "corpus_inf_shifted_right"
    CORPUS_ANT_SHIFTED_LEFT = "corpus_ant_shifted_left"
    CORPUS_ANT_SHIFTED_RIGHT = "corpus_ant_shifted_right"
    CORPUS_POST_SHIFTED_LEFT = "corpus_post_shifted_left"
    CORPUS_POST_SHIFTED_RIGHT = "corpus_post_shifted_right"
    FLAVUM_SUP = "flavum_sup"
    FLAVUM_INF = "flavum_inf"


_LANDMARK_ORDER = {lm: i for i, lm in enumerate(Landmark)}


@dataclass(frozen=True)
class BisectionConfig:
    precision_mm: float = 0.05
    initial_step_mm: float = 4.0
    max_iterations: int = 200

    def __post_init__(self):
        if self.precision_mm <= 0 or self.initial_step_mm <= 0:
            raise ConfigError("bisection precision and initial step must be positive")
        if self.precision_mm >= self.initial_step_mm:
            raise ConfigError("precision_mm must be below initial_step_mm")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be positive")


@dataclass(frozen=True)
class RayConfig:
    march_step_mm: float = 0.25
    max_travel_mm: Optional[float] = None  # None: mask bounding-box diagonal

    def __post_init__(self):
        if self.march_step_mm <= 0:
            raise ConfigError("march_step_mm must be positive")
        if self.max_travel_mm is not None and self.max_travel_mm <= 0:
            raise ConfigError("max_travel_mm must be positive")

    def check_spacing(self, vol: LabelVolume) -> None:
        smallest = float(np.min(vol.frame.spacing))
        if self.march_step_mm > smallest + 1e-12:
            raise ConfigError(
                f"march_step_mm={self.march_step_mm} exceeds the smallest voxel "
                f"spacing {smallest}")


@dataclass(frozen=True)
class ExtractConfig:
    ray: RayConfig = RayConfig()
    bisection: BisectionConfig = BisectionConfig()
    shift_mode: str = "divide"  # how the vertebra factor rescales the shift

    def __post_init__(self):
        if self.shift_mode not in ("divide", "multiply"):
            raise ConfigError(f"shift_mode must be divide or multiply, got {self.shift_mode!r}")


@dataclass(frozen=True)
class Skip:
    v_id: int
    name: str
    reason: str


@dataclass
class PoiSet:
    """Landmark set keyed by (v_id, Landmark), with frames and provenance.

    ``space`` is "world" (points in mm of ``convention``) or "voxel"
    (continuous indices of ``grid``). Frames always stay in world mm.
    Iteration order is deterministic: ascending v_id, then landmark order.
    """

    convention: Convention = Convention.RAS
    space: str = "world"
    grid: Optional[AffineFrame] = None
    entries: dict = field(default_factory=dict)
    frames: dict = field(default_factory=dict)
    levels: dict = field(default_factory=dict)
    skips: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def add(self, v_id: int, landmark: Landmark, point: np.ndarray) -> None:
        key = (int(v_id), Landmark(landmark))
        if key in self.entries:
            raise ValueError(f"duplicate landmark {key}")
        self.entries[key] = np.asarray(point, dtype=float)

    def get(self, v_id: int, landmark: Landmark) -> Optional[np.ndarray]:
        return self.entries.get((int(v_id), Landmark(landmark)))

    def iter_entries(self):
        for key in sorted(self.entries, key=lambda k: (k[0], _LANDMARK_ORDER[k[1]])):
            yield key[0], key[1], self.entries[key]

    def v_ids(self) -> list[int]:
        ids = {v for v, _ in self.entries} | set(self.frames) | {s.v_id for s in self.skips}
        return sorted(ids)

    def __len__(self) -> int:
        return len(self.entries)

    def merge(self, other: "PoiSet") -> None:
        if other.convention != self.convention or other.space != self.space:
            raise ValueError("cannot merge landmark sets with different spaces")
        for v_id, lm, p in other.iter_entries():
            self.add(v_id, lm, p)
        for v_id, fr in other.frames.items():
            self.frames.setdefault(v_id, fr)
        for v_id, lv in other.levels.items():
            self.levels.setdefault(v_id, lv)
        self.skips.extend(other.skips)
        self.notes.extend(other.notes)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("zero direction vector")
    return v / n


# ---------------------------------------------------------------------------
# Search primitives
# ---------------------------------------------------------------------------

def _raycast(occ: OccupancyField, origin, direction, ray_cfg: RayConfig,
             bis_cfg: BisectionConfig) -> np.ndarray:
    """Farthest 0.5-crossing along a ray, refined by scalar bisection.

    The farthest-inside rule (rather than first exit) tolerates interior
    gaps that anisotropic voxel grids alias into process masks.
    """
    origin = np.asarray(origin, dtype=float)
    d = _unit(direction)
    if occ.sample(origin) < INSIDE_THRESHOLD:
        raise RayOriginOutside(f"ray origin {origin} has occupancy below 0.5")
    max_travel = ray_cfg.max_travel_mm
    if max_travel is None:
        max_travel = occ.bbox_diagonal_mm()
    step = ray_cfg.march_step_mm
    n = int(math.ceil(max_travel / step)) + 1
    ts = np.arange(n, dtype=float) * step
    samples = occ.sample(origin + ts[:, None] * d)
    inside = np.nonzero(samples >= INSIDE_THRESHOLD)[0]
    if inside.size == 0:
        raise RayMiss("no inside sample along ray")
    t_in = float(ts[inside[-1]])
    t_out = t_in + step
    guard = 0
    while occ.sample(origin + t_out * d) >= INSIDE_THRESHOLD:
        t_out += step
        guard += 1
        if guard > n:
            raise RayMiss("mask never ends along ray")
    while t_out - t_in > bis_cfg.precision_mm:
        mid = 0.5 * (t_in + t_out)
        if occ.sample(origin + mid * d) >= INSIDE_THRESHOLD:
            t_in = mid
        else:
            t_out = mid
    return origin + 0.5 * (t_in + t_out) * d


def _corner_walk(occ: OccupancyField, start, axis_a, axis_b, sign_a, sign_b,
                 cfg: BisectionConfig) -> np.ndarray:
    """Alternating outward walk with adaptive per-axis step budgets.

    Each attempt marches within the axis's current budget at half-voxel
    granularity and jumps to the farthest inside sample found (mirroring the
    gap-tolerant ray semantics; a tilted face leaves full-depth ripples in
    the interpolated boundary that endpoint-only probes cannot cross). An
    empty march halves the budget, an accepted one re-doubles it up to the
    initial step. Budgets refine to half the precision, so the returned
    inside point sits within 2x precision of the walk's limit with both
    outward axis neighbors at precision distance outside or on the boundary.
    """
    start = np.asarray(start, dtype=float)
    a = _unit(axis_a) * float(np.sign(sign_a))
    b = _unit(axis_b) * float(np.sign(sign_b))
    if abs(float(np.dot(a, b))) > 1e-6:
        raise ValueError("bisection axes must be orthogonal")
    if occ.sample(start) < INSIDE_THRESHOLD:
        raise BisectionStartOutside(f"bisection start {start} has occupancy below 0.5")
    p = start
    budgets = [cfg.initial_step_mm, cfg.initial_step_mm]
    axes = (a, b)
    attempts = 0
    stop = 0.5 * cfg.precision_mm
    probe = max(0.5 * float(np.min(occ.frame.spacing)), stop)
    while budgets[0] >= stop or budgets[1] >= stop:
        # A sub-threshold axis is still attempted: a tiny accepted move
        # re-doubles its budget, so progress on one axis can revive the other.
        for i in (0, 1):
            attempts += 1
            if attempts > cfg.max_iterations:
                raise BisectionDiverged(
                    f"2D bisection exceeded {cfg.max_iterations} attempts")
            s = budgets[i]
            ts = np.arange(1, int(s / probe) + 1) * probe
            if ts.size == 0 or ts[-1] < s - 1e-12:
                ts = np.append(ts, s)
            samples = occ.sample(p + ts[:, None] * axes[i])
            inside = np.nonzero(samples >= INSIDE_THRESHOLD)[0]
            if inside.size:
                p = p + float(ts[inside[-1]]) * axes[i]
                budgets[i] = min(2.0 * budgets[i], cfg.initial_step_mm)
            else:
                budgets[i] *= 0.5
    return p


def _bisect_exit_1d(occ: OccupancyField, start, direction, march_step: float,
                    bis_cfg: BisectionConfig, max_travel: Optional[float] = None) -> np.ndarray:
    """First 0.5-crossing from an inside start along a direction."""
    start = np.asarray(start, dtype=float)
    d = _unit(direction)
    if occ.sample(start) < INSIDE_THRESHOLD:
        raise BisectionStartOutside(f"1D bisection start {start} has occupancy below 0.5")
    if max_travel is None:
        max_travel = occ.bbox_diagonal_mm() + march_step
    t_base = 0.0
    t_out = None
    while t_base < max_travel:
        ts = t_base + march_step * np.arange(1, 257, dtype=float)
        samples = occ.sample(start + ts[:, None] * d)
        outside = np.nonzero(samples < INSIDE_THRESHOLD)[0]
        if outside.size:
            t_out = float(ts[outside[0]])
            break
        t_base = float(ts[-1])
    if t_out is None:
        raise RayMiss("mask never ends along direction")
    t_in = t_out - march_step
    while t_out - t_in > bis_cfg.precision_mm:
        mid = 0.5 * (t_in + t_out)
        if occ.sample(start + mid * d) >= INSIDE_THRESHOLD:
            t_in = mid
        else:
            t_out = mid
    return start + 0.5 * (t_in + t_out) * d


# ---------------------------------------------------------------------------
# Public search operations
# ---------------------------------------------------------------------------

def raycast_surface_point(vol: LabelVolume, label_set: Iterable[int], origin,
                          direction, ray_cfg: RayConfig = RayConfig(),
                          bis_cfg: BisectionConfig = BisectionConfig()) -> np.ndarray:
    """March from an inside origin and return the farthest surface crossing."""
    ray_cfg.check_spacing(vol)
    return _raycast(OccupancyField(vol, label_set), origin, direction, ray_cfg, bis_cfg)


def corner_bisection_2d(vol: LabelVolume, label_set: Iterable[int], start,
                        axis_a, axis_b, sign_a: float, sign_b: float,
                        bis_cfg: BisectionConfig = BisectionConfig()) -> np.ndarray:
    """In-plane greedy corner search restricted to the given labels."""
    return _corner_walk(OccupancyField(vol, label_set), start, axis_a, axis_b,
                        sign_a, sign_b, bis_cfg)


# ---------------------------------------------------------------------------
# Per-vertebra landmark groups
# ---------------------------------------------------------------------------

def _empty_set(vertebra: VertebraInstance) -> PoiSet:
    pois = PoiSet(convention=vertebra.volume.frame.convention)
    pois.levels[vertebra.v_id] = vertebra.level
    return pois


_TIP_TARGETS = (
    (Landmark.SPINOSUS_TIP, Subregion.SPINOSUS,
     lambda f: f.inferior + 0.2 * f.posterior),
    (Landmark.COSTAL_TIP_LEFT, Subregion.COSTAL_LEFT,
     lambda f: 0.5 * f.left + 0.5 * f.posterior),
    (Landmark.COSTAL_TIP_RIGHT, Subregion.COSTAL_RIGHT,
     lambda f: 0.5 * f.right + 0.5 * f.posterior),
    (Landmark.SUP_ARTICULAR_TIP_LEFT, Subregion.SUP_ARTICULAR_LEFT, lambda f: f.superior),
    (Landmark.SUP_ARTICULAR_TIP_RIGHT, Subregion.SUP_ARTICULAR_RIGHT, lambda f: f.superior),
    (Landmark.INF_ARTICULAR_TIP_LEFT, Subregion.INF_ARTICULAR_LEFT, lambda f: f.inferior),
    (Landmark.INF_ARTICULAR_TIP_RIGHT, Subregion.INF_ARTICULAR_RIGHT, lambda f: f.inferior),
)


def process_tip_pois(vertebra: VertebraInstance, frame: LocalFrame,
                     cfgs: ExtractConfig = ExtractConfig()) -> PoiSet:
    """Tips of all vertebral processes by raycasting from each subregion's CMS."""
    pois = _empty_set(vertebra)
    for landmark, subregion, direction_of in _TIP_TARGETS:
        if not vertebra.has(subregion):
            pois.skips.append(Skip(vertebra.v_id, landmark.value,
                                   f"empty subregion: {subregion.value}"))
            continue
        occ = OccupancyField(vertebra.volume, vertebra.label_codes(subregion))
        origin = vertebra.center_of_mass(subregion)
        try:
            point = _raycast(occ, origin, direction_of(frame), cfgs.ray, cfgs.bisection)
        except (RayOriginOutside, RayMiss) as exc:
            pois.skips.append(Skip(vertebra.v_id, landmark.value, str(exc)))
            continue
        pois.add(vertebra.v_id, landmark, point)
    return pois


_CARDINALS = (
    (Landmark.CORPUS_SUP, lambda f: f.superior),
    (Landmark.CORPUS_INF, lambda f: f.inferior),
    (Landmark.CORPUS_ANT, lambda f: f.anterior),
    (Landmark.CORPUS_POST, lambda f: f.posterior),
    (Landmark.CORPUS_LEFT, lambda f: f.left),
    (Landmark.CORPUS_RIGHT, lambda f: f.right),
)


def corpus_cardinal_pois(vertebra: VertebraInstance, frame: LocalFrame,
                         cfgs: ExtractConfig = ExtractConfig()) -> PoiSet:
    """Six corpus surface points along the frame axes, raycast from the CMS."""
    pois = _empty_set(vertebra)
    occ = OccupancyField(vertebra.volume, vertebra.label_codes(Subregion.CORPUS))
    origin = vertebra.center_of_mass(Subregion.CORPUS)
    if occ.sample(origin) < INSIDE_THRESHOLD:
        origin = occ.nearest_inside_voxel_center(origin)
        pois.notes.append(
            f"{vertebra.level}: corpus CMS outside mask, rays cast from nearest "
            f"inside voxel center")
    for landmark, direction_of in _CARDINALS:
        try:
            point = _raycast(occ, origin, direction_of(frame), cfgs.ray, cfgs.bisection)
        except (RayOriginOutside, RayMiss) as exc:
            pois.skips.append(Skip(vertebra.v_id, landmark.value, str(exc)))
            continue
        pois.add(vertebra.v_id, landmark, point)
    return pois


# Sign pairs over the (superior, posterior) axis pair; anterior is -posterior.
_CORNER_SIGNS = (
    (Landmark.CORNER_SUP_ANT, +1.0, -1.0),
    (Landmark.CORNER_SUP_POST, +1.0, +1.0),
    (Landmark.CORNER_INF_ANT, -1.0, -1.0),
    (Landmark.CORNER_INF_POST, -1.0, +1.0),
)


def corpus_corners(vertebra: VertebraInstance, frame: LocalFrame,
                   bis_cfg: BisectionConfig = BisectionConfig()) -> PoiSet:
    """Four mid-sagittal corpus corners in the (superior, posterior) plane."""
    pois = _empty_set(vertebra)
    occ = OccupancyField(vertebra.volume, vertebra.label_codes(Subregion.CORPUS))
    start = vertebra.center_of_mass(Subregion.CORPUS)
    for landmark, sign_sup, sign_post in _CORNER_SIGNS:
        try:
            point = _corner_walk(occ, start, frame.superior, frame.posterior,
                                 sign_sup, sign_post, bis_cfg)
        except (BisectionStartOutside, BisectionDiverged) as exc:
            pois.skips.append(Skip(vertebra.v_id, landmark.value, str(exc)))
            continue
        pois.add(vertebra.v_id, landmark, point)
    return pois


_FLAVUM_RECOVERY_MM = 10.0


def _recover_in_plane(occ: OccupancyField, start, e1, e2,
                      max_radius: float = _FLAVUM_RECOVERY_MM,
                      step: float = 0.5) -> Optional[np.ndarray]:
    """Nearest inside point on rings around start within the plane span{e1,e2}."""
    if occ.sample(start) >= INSIDE_THRESHOLD:
        return np.asarray(start, dtype=float)
    for r in np.arange(step, max_radius + 1e-9, step):
        k = max(8, int(math.ceil(2.0 * math.pi * r / step)))
        ang = np.arange(k) * (2.0 * math.pi / k)
        ring = start + r * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)
        hits = np.nonzero(occ.sample(ring) >= INSIDE_THRESHOLD)[0]
        if hits.size:
            return ring[hits[0]]
    return None


def flavum_points(vertebra: VertebraInstance, frame: LocalFrame, corners: PoiSet,
                  cfgs: ExtractConfig = ExtractConfig()) -> PoiSet:
    """Ligamentum-flavum attachment points on the anterior arch surface.

    Each point lies in the axial plane of the corresponding posterior corpus
    corner; the search starts at the arcus CMS projected onto that plane and
    bisects anteriorly within the arcus mask.
    """
    pois = _empty_set(vertebra)
    pairs = ((Landmark.FLAVUM_SUP, Landmark.CORNER_SUP_POST),
             (Landmark.FLAVUM_INF, Landmark.CORNER_INF_POST))
    if not vertebra.has(Subregion.ARCUS):
        for landmark, _ in pairs:
            pois.skips.append(Skip(vertebra.v_id, landmark.value,
                                   "empty subregion: arcus"))
        return pois
    occ = OccupancyField(vertebra.volume, vertebra.label_codes(Subregion.ARCUS))
    arcus_cms = vertebra.center_of_mass(Subregion.ARCUS)
    for landmark, corner_name in pairs:
        corner = corners.get(vertebra.v_id, corner_name)
        if corner is None:
            pois.skips.append(Skip(vertebra.v_id, landmark.value,
                                   f"posterior corner {corner_name.value} unavailable"))
            continue
        start = arcus_cms + float((corner - arcus_cms) @ frame.superior) * frame.superior
        recovered = _recover_in_plane(occ, start, frame.posterior, frame.lateral)
        if recovered is None:
            pois.skips.append(Skip(
                vertebra.v_id, landmark.value,
                f"start not recoverable to inside arcus within {_FLAVUM_RECOVERY_MM} mm"))
            continue
        if not np.array_equal(recovered, start):
            pois.notes.append(f"{vertebra.level}: {landmark.value} start moved "
                              f"{np.linalg.norm(recovered - start):.2f} mm onto the arcus")
        try:
            point = _bisect_exit_1d(occ, recovered, frame.anterior,
                                    cfgs.ray.march_step_mm, cfgs.bisection)
        except (BisectionStartOutside, RayMiss) as exc:
            pois.skips.append(Skip(vertebra.v_id, landmark.value, str(exc)))
            continue
        pois.add(vertebra.v_id, landmark, point)
    return pois


def shift_factor(v_id: int) -> float:
    """Vertebra-dependent rescaling of the lateral shift, (12 - v_id)/11 + 1
    for v_id <= 11 and 1 below that; C1 gives exactly 2."""
    if v_id < 1:
        raise ValueError(f"v_id must be >= 1, got {v_id}")
    return (23 - v_id) / 11.0 if v_id <= 11 else 1.0


def lateral_shift_mm(vertebra: VertebraInstance, frame: LocalFrame,
                     cardinals: Optional[PoiSet] = None,
                     mode: str = "divide") -> tuple[Optional[float], Optional[str]]:
    """Lateral offset for the shifted landmark family.

    One third of the distance between the superior articular CMS pair,
    rescaled by the vertebra factor (divided by default so cervical offsets
    stay on the smaller bodies; ``mode="multiply"`` applies the opposite
    reading). Falls back to a sixth of the corpus left-right extent when the
    articular masks are missing. Returns (shift, provenance note).
    """
    if mode not in ("divide", "multiply"):
        raise ConfigError(f"mode must be divide or multiply, got {mode!r}")
    f = shift_factor(vertebra.v_id)
    if vertebra.has(Subregion.SUP_ARTICULAR_LEFT) and vertebra.has(Subregion.SUP_ARTICULAR_RIGHT):
        left = vertebra.center_of_mass(Subregion.SUP_ARTICULAR_LEFT)
        right = vertebra.center_of_mass(Subregion.SUP_ARTICULAR_RIGHT)
        base = float(np.linalg.norm(left - right)) / 3.0
        shift = base / f if mode == "divide" else base * f
        return shift, None
    if cardinals is not None:
        pl = cardinals.get(vertebra.v_id, Landmark.CORPUS_LEFT)
        pr = cardinals.get(vertebra.v_id, Landmark.CORPUS_RIGHT)
        if pl is not None and pr is not None:
            shift = float(np.linalg.norm(pl - pr)) / 6.0
            return shift, (f"{vertebra.level}: lateral shift from corpus width "
                           f"(superior articular masks missing)")
    return None, None


_SHIFTED_CORNERS = {
    "left": (
        (Landmark.CORNER_SUP_ANT_SHIFTED_LEFT, +1.0, -1.0),
        (Landmark.CORNER_SUP_POST_SHIFTED_LEFT, +1.0, +1.0),
        (Landmark.CORNER_INF_ANT_SHIFTED_LEFT, -1.0, -1.0),
        (Landmark.CORNER_INF_POST_SHIFTED_LEFT, -1.0, +1.0),
    ),
    "right": (
        (Landmark.CORNER_SUP_ANT_SHIFTED_RIGHT, +1.0, -1.0),
        (Landmark.CORNER_SUP_POST_SHIFTED_RIGHT, +1.0, +1.0),
        (Landmark.CORNER_INF_ANT_SHIFTED_RIGHT, -1.0, -1.0),
        (Landmark.CORNER_INF_POST_SHIFTED_RIGHT, -1.0, +1.0),
    ),
}

_SHIFTED_CARDINALS = {
    "left": (
        (Landmark.CORPUS_SUP_SHIFTED_LEFT, lambda f: f.superior),
        (Landmark.CORPUS_INF_SHIFTED_LEFT, lambda f: f.inferior),
        (Landmark.CORPUS_ANT_SHIFTED_LEFT, lambda f: f.anterior),
        (Landmark.CORPUS_POST_SHIFTED_LEFT, lambda f: f.posterior),
    ),
    "right": (
        (Landmark.CORPUS_SUP_SHIFTED_RIGHT, lambda f: f.superior),
        (Landmark.CORPUS_INF_SHIFTED_RIGHT, lambda f: f.inferior),
        (Landmark.CORPUS_ANT_SHIFTED_RIGHT, lambda f: f.anterior),
        (Landmark.CORPUS_POST_SHIFTED_RIGHT, lambda f: f.posterior),
    ),
}


def shifted_pois(vertebra: VertebraInstance, frame: LocalFrame, shift: float,
                 cfgs: ExtractConfig = ExtractConfig()) -> PoiSet:
    """Corner and in-plane cardinal landmarks recomputed from laterally
    offset origins (anterior longitudinal ligament attachment sites)."""
    if shift <= 0:
        raise ValueError(f"shift must be positive, got {shift}")
    pois = _empty_set(vertebra)
    occ = OccupancyField(vertebra.volume, vertebra.label_codes(Subregion.CORPUS))
    cms = vertebra.center_of_mass(Subregion.CORPUS)
    for side, side_vec in (("left", frame.left), ("right", frame.right)):
        origin = cms + shift * side_vec
        if occ.sample(origin) < INSIDE_THRESHOLD:
            origin = _pull_inside(occ, cms, side_vec, shift, cfgs)
            if origin is None:
                pois.skips.append(Skip(vertebra.v_id, f"shifted_{side}",
                                       "offset outside corpus"))
                continue
            pois.notes.append(f"{vertebra.level}: {side} shifted origin pulled "
                              f"inside the corpus")
        for landmark, sign_sup, sign_post in _SHIFTED_CORNERS[side]:
            try:
                point = _corner_walk(occ, origin, frame.superior, frame.posterior,
                                     sign_sup, sign_post, cfgs.bisection)
            except (BisectionStartOutside, BisectionDiverged) as exc:
                pois.skips.append(Skip(vertebra.v_id, landmark.value, str(exc)))
                continue
            pois.add(vertebra.v_id, landmark, point)
        for landmark, direction_of in _SHIFTED_CARDINALS[side]:
            try:
                point = _bisect_exit_1d(occ, origin, direction_of(frame),
                                        cfgs.ray.march_step_mm, cfgs.bisection)
            except (BisectionStartOutside, RayMiss) as exc:
                pois.skips.append(Skip(vertebra.v_id, landmark.value, str(exc)))
                continue
            pois.add(vertebra.v_id, landmark, point)
    return pois


def _pull_inside(occ: OccupancyField, cms, side_vec, shift: float,
                 cfgs: ExtractConfig) -> Optional[np.ndarray]:
    """Largest inside offset along side_vec within a voxel-scale rescue
    budget of the requested shift. The budget covers aliasing dips at coarse
    spacing; an offset genuinely beyond the corpus stays unrecoverable."""
    budget = 0.75 * float(np.max(occ.frame.spacing))
    step = cfgs.ray.march_step_mm
    ts = np.arange(shift, max(shift - budget - step, -step), -step)
    ts = np.maximum(ts, 0.0)
    pts = cms + ts[:, None] * side_vec
    inside = np.nonzero(occ.sample(pts) >= INSIDE_THRESHOLD)[0]
    if inside.size == 0:
        return None
    t_in = float(ts[inside[0]])
    t_out = min(t_in + step, shift)
    while t_out - t_in > cfgs.bisection.precision_mm:
        mid = 0.5 * (t_in + t_out)
        if occ.sample(cms + mid * side_vec) >= INSIDE_THRESHOLD:
            t_in = mid
        else:
            t_out = mid
    return cms + t_in * side_vec


# ---------------------------------------------------------------------------
# Full-spine assembly
# ---------------------------------------------------------------------------

def _vertebra_frame(vertebra: VertebraInstance, up: np.ndarray,
                    method: OrientationMethod) -> tuple[LocalFrame, list[str]]:
    notes = []
    needed = ((Subregion.ARCUS, Subregion.SPINOSUS)
              if method != OrientationMethod.CMS3D_ALL else
              tuple(s for s in Subregion if s is not Subregion.CORPUS))
    missing = [s.value for s in needed if not vertebra.has(s)]
    if missing and len(missing) < len(needed):
        notes.append(f"{vertebra.level}: orientation computed without empty "
                     f"subregion(s) {', '.join(missing)}")
    raw = posterior_raw(vertebra, up, method)
    posterior = orthogonalize(raw, up)
    origin = vertebra.center_of_mass(Subregion.CORPUS)
    return build_frame(origin, up, posterior), notes


def _extract_one(vertebra: VertebraInstance, up: np.ndarray,
                 method: OrientationMethod, cfgs: ExtractConfig) -> PoiSet:
    pois = _empty_set(vertebra)
    try:
        frame, notes = _vertebra_frame(vertebra, up, method)
    except (EmptySubregion, DegenerateOrientation) as exc:
        pois.skips.append(Skip(vertebra.v_id, "frame", str(exc)))
        return pois
    pois.notes.extend(notes)
    pois.frames[vertebra.v_id] = frame

    cardinals = corpus_cardinal_pois(vertebra, frame, cfgs)
    pois.merge(cardinals)
    pois.merge(process_tip_pois(vertebra, frame, cfgs))
    corners = corpus_corners(vertebra, frame, cfgs.bisection)
    pois.merge(corners)
    pois.merge(flavum_points(vertebra, frame, corners, cfgs))

    shift, note = lateral_shift_mm(vertebra, frame, cardinals, cfgs.shift_mode)
    if note:
        pois.notes.append(note)
    if shift is None or shift <= 0:
        pois.skips.append(Skip(vertebra.v_id, "lateral_shift",
                               "no superior articular masks and no corpus width"))
    else:
        pois.merge(shifted_pois(vertebra, frame, shift, cfgs))
    return pois


def extract_all(spine: SpineInstance, method: OrientationMethod = OrientationMethod.PROJECTION_2D,
                cfgs: ExtractConfig = ExtractConfig(), threads: int = 1) -> PoiSet:
    """Extract the full landmark set for every vertebra of a spine.

    Per-vertebra work is independent and may run on a thread pool; results
    are merged in ascending v_id order so output is identical for any thread
    count.
    """
    cfgs.ray.check_spacing(spine.volume)
    method = OrientationMethod(method)
    ups = [spine.craniocaudal(k)[0] for k in range(len(spine))]

    if threads > 1 and len(spine) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(
                lambda kv: _extract_one(kv[1], ups[kv[0]], method, cfgs),
                enumerate(spine.vertebrae)))
    else:
        parts = [_extract_one(v, ups[k], method, cfgs)
                 for k, v in enumerate(spine.vertebrae)]

    pois = PoiSet(convention=spine.volume.frame.convention)
    pois.notes.extend(spine.notes)
    for part in sorted(parts, key=lambda p: min(p.levels, default=0)):
        pois.merge(part)
    return pois


# ---------------------------------------------------------------------------
# Retargeting
# ---------------------------------------------------------------------------

def _flip_frame(fr: LocalFrame) -> LocalFrame:
    flip = np.array([-1.0, -1.0, 1.0])
    return LocalFrame(origin=fr.origin * flip, superior=fr.superior * flip,
                      posterior=fr.posterior * flip, lateral=fr.lateral * flip)


def retarget(pois: PoiSet, target) -> PoiSet:
    """Re-express all points in another convention or grid, exactly.

    ``target`` is a ``Convention`` (world output) or an ``AffineFrame``
    (continuous voxel indices of that grid). Points are transformed
    analytically; nothing is recomputed from masks. Frames stay in world mm
    (flipped for convention changes, kept in the grid's convention for voxel
    targets).
    """
    if isinstance(target, AffineFrame):
        world = _to_world(pois)
        out = PoiSet(convention=target.convention, space="voxel", grid=target,
                     levels=dict(world.levels), skips=list(world.skips),
                     notes=list(world.notes))
        flip = world.convention != target.convention
        for v_id, lm, p in world.iter_entries():
            q = convert_convention(p, world.convention, target.convention) if flip else p
            out.entries[(v_id, lm)] = target.apply_inverse(q)
        for v_id, fr in world.frames.items():
            out.frames[v_id] = _flip_frame(fr) if flip else fr
        return out
    target = Convention(target)
    world = _to_world(pois)
    if world.convention == target:
        return world
    out = PoiSet(convention=target, space="world", levels=dict(world.levels),
                 skips=list(world.skips), notes=list(world.notes))
    for v_id, lm, p in world.iter_entries():
        out.entries[(v_id, lm)] = convert_convention(p, world.convention, target)
    out.frames = {v_id: _flip_frame(fr) for v_id, fr in world.frames.items()}
    return out


def _to_world(pois: PoiSet) -> PoiSet:
    if pois.space == "world":
        return pois
    if pois.grid is None:
        raise InvalidFrame("voxel-space landmark set lacks its grid affine")
    out = PoiSet(convention=pois.convention, space="world",
                 frames=dict(pois.frames), levels=dict(pois.levels),
                 skips=list(pois.skips), notes=list(pois.notes))
    for (v_id, lm), p in pois.entries.items():
        out.entries[(v_id, lm)] = pois.grid.apply(p)
    return out
