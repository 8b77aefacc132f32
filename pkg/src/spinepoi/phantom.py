"""Procedural vertebra and spine phantoms with exact analytic ground truth.

Primitives are deliberately simple (boxes, a ringed arch, cylinder rods) so
that pose frames, surface points, corners, and process tips have closed-form
positions. Rasterization is by voxel-center inclusion. Rod bases are floated
a small gap off their anchor boxes so every subregion mask is exactly its
primitive and analytic volumes and centroids hold.

At identity pose the grid is phase-aligned so that box faces land exactly on
voxel boundaries, which makes face crossings and centers of mass exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .anatomy import Subregion, assemble_spine, level_to_vid, vid_to_level
from .errors import PhantomDegenerate
from .grid import AffineFrame, Convention, LabelVolume
from .labels import LabelDictionary, default_dictionary
from .orientation import LocalFrame, OrientationCase
from .poi import Landmark, shift_factor

__all__ = [
    "VertebraShape",
    "PosedVertebra",
    "PhantomSpec",
    "VertebraTruth",
    "PhantomTruth",
    "SUITE_SEED",
    "rotation_matrix",
    "default_shape",
    "generate",
    "generate_vertebra",
    "generate_spine",
    "default_spine_spec",
    "suite_phantoms",
    "orientation_suite",
    "read_phantom_spec",
]

# Fixed seed of the evaluation suite shipped with the repository.
SUITE_SEED = 90901


@dataclass(frozen=True)
class VertebraShape:
    """All extents in mm, angles in degrees. Local axes: x lateral (right),
    y anterior, z superior; the corpus is centered at the local origin."""

    corpus_half: tuple = (15.0, 12.0, 10.0)
    corpus_wedge_deg: float = 0.0        # anterior height compression of the body
    corpus_edge_radius: float = 0.0      # sagittal-profile corner rounding
    canal_half_width: float = 8.0        # xi
    arch_outer_half_width: float = 11.0  # xo
    pedicle_depth: float = 8.0
    lamina_thickness: float = 6.0
    arch_half_height: float = 12.0
    arch_skew_deg: float = 0.0           # lateral tilt of the arch top surface
    spinosus_length: float = 22.0
    spinosus_radius: float = 4.0
    spinosus_deflection_deg: float = 0.0
    # None: rod along the tip raycast blend inferior + 0.2*posterior. Spine
    # stacks use a swept-back rod instead so levels cannot collide.
    spinosus_direction: Optional[tuple] = None
    costal_length_left: float = 16.0
    costal_length_right: float = 16.0
    costal_radius: float = 3.0
    sup_articular_length_left: float = 6.0
    sup_articular_length_right: float = 6.0
    inf_articular_length_left: float = 6.0
    inf_articular_length_right: float = 6.0
    articular_radius: float = 2.0
    # Superior rods sit anterior of the pedicle mid-plane, inferior rods
    # posterior; 4 mm keeps facing rods of adjacent levels clear even across
    # region size transitions.
    articular_y_gap: float = 4.0

    def __post_init__(self):
        if min(self.corpus_half) <= 0 or self.lamina_thickness <= 0 \
                or self.pedicle_depth <= 0 or self.arch_half_height <= 0:
            raise PhantomDegenerate("all extents must be positive")
        if not self.canal_half_width < self.arch_outer_half_width:
            raise PhantomDegenerate("canal must be narrower than the arch")


@dataclass(frozen=True)
class PosedVertebra:
    level: str
    shape: VertebraShape
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        if r.shape != (3, 3) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise PhantomDegenerate("rotation must be a proper 3x3 rotation matrix")
        r.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        t = np.asarray(self.translation, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)
        level_to_vid(self.level)


@dataclass(frozen=True)
class PhantomSpec:
    vertebrae: tuple
    spacing: tuple = (1.0, 1.0, 1.0)
    convention: Convention = Convention.RAS
    margin_mm: float = 6.0

    def __post_init__(self):
        if any(s <= 0 for s in self.spacing):
            raise PhantomDegenerate("spacing must be positive")
        if len(self.vertebrae) == 0:
            raise PhantomDegenerate("need at least one vertebra")


@dataclass(frozen=True)
class VertebraTruth:
    v_id: int
    level: str
    frame: LocalFrame
    landmarks: dict
    tangent: np.ndarray  # cranio-caudal (caudad) centerline direction


@dataclass(frozen=True)
class PhantomTruth:
    vertebrae: tuple
    convention: Convention

    def by_vid(self, v_id: int) -> VertebraTruth:
        for v in self.vertebrae:
            if v.v_id == v_id:
                return v
        raise KeyError(v_id)


def rotation_matrix(rx_deg: float = 0.0, ry_deg: float = 0.0, rz_deg: float = 0.0) -> np.ndarray:
    """R = Rz @ Ry @ Rx, angles in degrees."""
    rx, ry, rz = np.radians([rx_deg, ry_deg, rz_deg])
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def default_shape(v_id: int) -> VertebraShape:
    """Region-typical sizes: cervical, thoracic, lumbar/sacral."""
    if v_id <= 7:
        return VertebraShape(
            corpus_half=(9.0, 7.0, 6.0), canal_half_width=6.0,
            arch_outer_half_width=8.5, pedicle_depth=6.0, lamina_thickness=4.0,
            arch_half_height=7.5, spinosus_length=12.0, spinosus_radius=3.0,
            costal_length_left=8.0, costal_length_right=8.0, costal_radius=2.0,
            sup_articular_length_left=5.0, sup_articular_length_right=5.0,
            inf_articular_length_left=5.0, inf_articular_length_right=5.0,
            articular_radius=2.0)
    if v_id <= 19:
        return VertebraShape(
            corpus_half=(12.0, 9.5, 8.0), canal_half_width=7.0,
            arch_outer_half_width=9.5, pedicle_depth=7.0, lamina_thickness=5.0,
            arch_half_height=9.5, spinosus_length=18.0, spinosus_radius=3.5,
            costal_length_left=12.0, costal_length_right=12.0, costal_radius=2.5,
            sup_articular_length_left=5.5, sup_articular_length_right=5.5,
            inf_articular_length_left=5.5, inf_articular_length_right=5.5,
            articular_radius=2.0)
    return VertebraShape()


# ---------------------------------------------------------------------------
# Analytic geometry of one vertebra in its local frame
# ---------------------------------------------------------------------------

_SPINOSUS_BASE_DIR = np.array([0.0, -0.2, -1.0]) / math.sqrt(1.04)


@dataclass(frozen=True)
class _Rod:
    base: np.ndarray
    axis: np.ndarray
    length: float
    radius: float

    @property
    def tip(self) -> np.ndarray:
        return self.base + self.length * self.axis

    @property
    def cms(self) -> np.ndarray:
        return self.base + 0.5 * self.length * self.axis

    def volume(self) -> float:
        return math.pi * self.radius ** 2 * self.length


def _local_rods(s: VertebraShape) -> dict[Subregion, _Rod]:
    hx, hy, hz = s.corpus_half
    xo = s.arch_outer_half_width
    y_ped = -hy - 0.5 * s.pedicle_depth
    y_lam_back = -hy - s.pedicle_depth - s.lamina_thickness
    x_art = 0.5 * (s.canal_half_width + xo)
    tan_skew = math.tan(math.radians(s.arch_skew_deg))
    rods: dict[Subregion, _Rod] = {}

    # Spinosus hangs below the lamina, optionally deflected laterally about
    # the local y axis. The base floats just clear of the arch box.
    defl = math.radians(s.spinosus_deflection_deg)
    c, si = math.cos(defl), math.sin(defl)
    if s.spinosus_direction is None:
        base_dir = _SPINOSUS_BASE_DIR
    else:
        base_dir = np.asarray(s.spinosus_direction, dtype=float)
        base_dir = base_dir / np.linalg.norm(base_dir)
    axis = np.array([c * base_dir[0] + si * base_dir[2], base_dir[1],
                     -si * base_dir[0] + c * base_dir[2]])
    perp_y = math.sqrt(max(1.0 - axis[1] ** 2, 0.0))
    perp_z = math.sqrt(max(1.0 - axis[2] ** 2, 0.0))
    if abs(axis[2]) >= abs(axis[1]):
        # plunging rod: float it below the arch box
        spin_base = np.array([0.0, y_ped - 0.5 * s.pedicle_depth - 0.5 * s.lamina_thickness,
                              -s.arch_half_height - perp_z * s.spinosus_radius - 0.3])
    else:
        # backward blade: float it behind the lamina at mid height
        spin_base = np.array([0.0, y_lam_back - perp_y * s.spinosus_radius - 0.3, 0.0])
    rods[Subregion.SPINOSUS] = _Rod(spin_base, axis, s.spinosus_length, s.spinosus_radius)

    # Costal rods leave the pedicle walls along 0.5*lateral + 0.5*posterior,
    # floated one radius out so the cylinder clears the arch.
    diag = 1.0 / math.sqrt(2.0)
    for sub, sign, length in ((Subregion.COSTAL_LEFT, -1.0, s.costal_length_left),
                              (Subregion.COSTAL_RIGHT, +1.0, s.costal_length_right)):
        axis = np.array([sign * diag, -diag, 0.0])
        anchor = np.array([sign * xo, y_ped, 0.0])
        base = anchor + (s.costal_radius + 0.3) * axis
        rods[sub] = _Rod(base, axis, length, s.costal_radius)

    # Articular rods run straight up/down from just above/below the arch.
    z_sup = s.arch_half_height + abs(tan_skew) * (x_art + s.articular_radius) + 0.3
    z_inf = -s.arch_half_height - 0.3
    y_sup = y_ped + s.articular_y_gap
    y_inf = y_ped - s.articular_y_gap
    up = np.array([0.0, 0.0, 1.0])
    rods[Subregion.SUP_ARTICULAR_LEFT] = _Rod(
        np.array([-x_art, y_sup, z_sup]), up, s.sup_articular_length_left, s.articular_radius)
    rods[Subregion.SUP_ARTICULAR_RIGHT] = _Rod(
        np.array([x_art, y_sup, z_sup]), up, s.sup_articular_length_right, s.articular_radius)
    rods[Subregion.INF_ARTICULAR_LEFT] = _Rod(
        np.array([-x_art, y_inf, z_inf]), -up, s.inf_articular_length_left, s.articular_radius)
    rods[Subregion.INF_ARTICULAR_RIGHT] = _Rod(
        np.array([x_art, y_inf, z_inf]), -up, s.inf_articular_length_right, s.articular_radius)
    return rods


def _corpus_mask(s: VertebraShape, local: np.ndarray) -> np.ndarray:
    hx, hy, hz = s.corpus_half
    x, y, z = local[:, 0], local[:, 1], local[:, 2]
    tan_w = math.tan(math.radians(s.corpus_wedge_deg))
    z_top = hz - tan_w * (y + hy)
    mask = (np.abs(x) <= hx) & (np.abs(y) <= hy) & (z >= -hz) & (z <= z_top)
    r = s.corpus_edge_radius
    if r > 0.0 and s.corpus_wedge_deg == 0.0:
        cy, cz = hy - r, hz - r
        ay, az = np.abs(y), np.abs(z)
        in_corner = (ay > cy) & (az > cz)
        ok = (ay - cy) ** 2 + (az - cz) ** 2 <= r ** 2
        mask &= ~in_corner | ok
    return mask


def _arch_mask(s: VertebraShape, local: np.ndarray) -> np.ndarray:
    hx, hy, hz = s.corpus_half
    xi, xo = s.canal_half_width, s.arch_outer_half_width
    x, y, z = local[:, 0], local[:, 1], local[:, 2]
    y0, y1 = -hy - s.pedicle_depth, -hy
    yl0 = y0 - s.lamina_thickness
    ped = (np.abs(x) >= xi) & (np.abs(x) <= xo) & (y >= y0) & (y <= y1)
    lam = (np.abs(x) <= xo) & (y >= yl0) & (y <= y0)
    tan_skew = math.tan(math.radians(s.arch_skew_deg))
    return (ped | lam) & (z >= -s.arch_half_height) & (z <= s.arch_half_height + tan_skew * x)


def _rod_mask(rod: _Rod, local: np.ndarray) -> np.ndarray:
    rel = local - rod.base
    t = rel @ rod.axis
    perp2 = np.einsum("ij,ij->i", rel, rel) - t ** 2
    return (t >= 0.0) & (t <= rod.length) & (perp2 <= rod.radius ** 2)


def _local_bounds(s: VertebraShape) -> tuple[np.ndarray, np.ndarray]:
    pts = []
    hx, hy, hz = s.corpus_half
    pts.append((np.array([-hx, -hy, -hz]), 0.0))
    pts.append((np.array([hx, hy, hz]), 0.0))
    xo = s.arch_outer_half_width
    tan_skew = abs(math.tan(math.radians(s.arch_skew_deg)))
    pts.append((np.array([-xo, -hy - s.pedicle_depth - s.lamina_thickness,
                          -s.arch_half_height]), 0.0))
    pts.append((np.array([xo, -hy, s.arch_half_height + tan_skew * xo]), 0.0))
    for rod in _local_rods(s).values():
        pts.append((rod.base, rod.radius))
        pts.append((rod.tip, rod.radius))
    lo = np.min([p - pad for p, pad in pts], axis=0)
    hi = np.max([p + pad for p, pad in pts], axis=0)
    return lo, hi


def analytic_volume_mm3(s: VertebraShape) -> float:
    """Closed-form solid volume of all subregions together."""
    hx, hy, hz = s.corpus_half
    corpus = 8.0 * hx * hy * hz
    tan_w = math.tan(math.radians(s.corpus_wedge_deg))
    corpus -= tan_w * 2.0 * hy ** 2 * 2.0 * hx
    r = s.corpus_edge_radius
    if r > 0.0 and s.corpus_wedge_deg == 0.0:
        corpus -= 4.0 * (r ** 2 - math.pi * r ** 2 / 4.0) * 2.0 * hx
    xi, xo = s.canal_half_width, s.arch_outer_half_width
    foot = 2.0 * (xo - xi) * s.pedicle_depth + 2.0 * xo * s.lamina_thickness
    arch = foot * 2.0 * s.arch_half_height  # skew is mass-neutral
    rods = sum(rod.volume() for rod in _local_rods(s).values())
    return corpus + arch + rods


def _truth_landmarks(s: VertebraShape, rods: dict) -> dict[Landmark, np.ndarray]:
    """Local-frame landmark truth for the analytically clean parts."""
    hx, hy, hz = s.corpus_half
    out: dict[Landmark, np.ndarray] = {}
    for sub, lm in ((Subregion.SPINOSUS, Landmark.SPINOSUS_TIP),
                    (Subregion.COSTAL_LEFT, Landmark.COSTAL_TIP_LEFT),
                    (Subregion.COSTAL_RIGHT, Landmark.COSTAL_TIP_RIGHT),
                    (Subregion.SUP_ARTICULAR_LEFT, Landmark.SUP_ARTICULAR_TIP_LEFT),
                    (Subregion.SUP_ARTICULAR_RIGHT, Landmark.SUP_ARTICULAR_TIP_RIGHT),
                    (Subregion.INF_ARTICULAR_LEFT, Landmark.INF_ARTICULAR_TIP_LEFT),
                    (Subregion.INF_ARTICULAR_RIGHT, Landmark.INF_ARTICULAR_TIP_RIGHT)):
        out[lm] = rods[sub].tip

    clean_corpus = s.corpus_wedge_deg == 0.0 and s.corpus_edge_radius == 0.0
    if clean_corpus:
        out[Landmark.CORPUS_SUP] = np.array([0.0, 0.0, hz])
        out[Landmark.CORPUS_INF] = np.array([0.0, 0.0, -hz])
        out[Landmark.CORPUS_ANT] = np.array([0.0, hy, 0.0])
        out[Landmark.CORPUS_POST] = np.array([0.0, -hy, 0.0])
        out[Landmark.CORPUS_LEFT] = np.array([-hx, 0.0, 0.0])
        out[Landmark.CORPUS_RIGHT] = np.array([hx, 0.0, 0.0])
        out[Landmark.CORNER_SUP_ANT] = np.array([0.0, hy, hz])
        out[Landmark.CORNER_SUP_POST] = np.array([0.0, -hy, hz])
        out[Landmark.CORNER_INF_ANT] = np.array([0.0, hy, -hz])
        out[Landmark.CORNER_INF_POST] = np.array([0.0, -hy, -hz])

    if s.arch_skew_deg == 0.0:
        y_front = -hy - s.pedicle_depth
        out[Landmark.FLAVUM_SUP] = np.array([0.0, y_front, hz])
        out[Landmark.FLAVUM_INF] = np.array([0.0, y_front, -hz])
    return out


def _truth_shifted(s: VertebraShape, rods: dict, v_id: int,
                   base: dict) -> dict[Landmark, np.ndarray]:
    sap_l = rods[Subregion.SUP_ARTICULAR_LEFT].cms
    sap_r = rods[Subregion.SUP_ARTICULAR_RIGHT].cms
    shift = float(np.linalg.norm(sap_l - sap_r)) / 3.0 / shift_factor(v_id)
    hx = s.corpus_half[0]
    if shift >= hx:
        return {}
    pairs = (
        (Landmark.CORNER_SUP_ANT, Landmark.CORNER_SUP_ANT_SHIFTED_LEFT,
         Landmark.CORNER_SUP_ANT_SHIFTED_RIGHT),
        (Landmark.CORNER_SUP_POST, Landmark.CORNER_SUP_POST_SHIFTED_LEFT,
         Landmark.CORNER_SUP_POST_SHIFTED_RIGHT),
        (Landmark.CORNER_INF_ANT, Landmark.CORNER_INF_ANT_SHIFTED_LEFT,
         Landmark.CORNER_INF_ANT_SHIFTED_RIGHT),
        (Landmark.CORNER_INF_POST, Landmark.CORNER_INF_POST_SHIFTED_LEFT,
         Landmark.CORNER_INF_POST_SHIFTED_RIGHT),
        (Landmark.CORPUS_SUP, Landmark.CORPUS_SUP_SHIFTED_LEFT,
         Landmark.CORPUS_SUP_SHIFTED_RIGHT),
        (Landmark.CORPUS_INF, Landmark.CORPUS_INF_SHIFTED_LEFT,
         Landmark.CORPUS_INF_SHIFTED_RIGHT),
        (Landmark.CORPUS_ANT, Landmark.CORPUS_ANT_SHIFTED_LEFT,
         Landmark.CORPUS_ANT_SHIFTED_RIGHT),
        (Landmark.CORPUS_POST, Landmark.CORPUS_POST_SHIFTED_LEFT,
         Landmark.CORPUS_POST_SHIFTED_RIGHT),
    )
    lat = np.array([1.0, 0.0, 0.0])
    out = {}
    for mid, left, right in pairs:
        if mid in base:
            out[left] = base[mid] - shift * lat
            out[right] = base[mid] + shift * lat
    return out


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

_PAINT_ORDER = (
    Subregion.CORPUS, Subregion.ARCUS, Subregion.SPINOSUS,
    Subregion.COSTAL_LEFT, Subregion.COSTAL_RIGHT,
    Subregion.SUP_ARTICULAR_LEFT, Subregion.SUP_ARTICULAR_RIGHT,
    Subregion.INF_ARTICULAR_LEFT, Subregion.INF_ARTICULAR_RIGHT,
)


def _aligned_origin(anchor: np.ndarray, lo: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    # Voxel centers at anchor + (k + 0.5) * spacing so box faces of the first
    # vertebra land exactly on voxel boundaries at identity pose.
    n = np.ceil((anchor - lo) / spacing - 0.5)
    return anchor - (n + 0.5) * spacing


def generate(spec: PhantomSpec,
             dictionary: Optional[LabelDictionary] = None) -> tuple[LabelVolume, PhantomTruth]:
    """Rasterize all posed vertebrae and return the label volume plus truth."""
    dictionary = dictionary or default_dictionary()
    spacing = np.asarray(spec.spacing, dtype=float)

    world_lo = np.full(3, np.inf)
    world_hi = np.full(3, -np.inf)
    per_vertebra = []
    for pv in spec.vertebrae:
        lo, hi = _local_bounds(pv.shape)
        corners = np.array([[lo[i] if b & (1 << i) == 0 else hi[i] for i in range(3)]
                            for b in range(8)])
        wc = corners @ pv.rotation.T + pv.translation
        per_vertebra.append((wc.min(axis=0), wc.max(axis=0)))
        world_lo = np.minimum(world_lo, wc.min(axis=0))
        world_hi = np.maximum(world_hi, wc.max(axis=0))

    world_lo -= spec.margin_mm
    world_hi += spec.margin_mm
    origin = _aligned_origin(spec.vertebrae[0].translation, world_lo, spacing)
    dims = np.ceil((world_hi - origin) / spacing).astype(int) + 1
    if np.any(dims <= 0) or np.prod(dims) > 200_000_000:
        raise PhantomDegenerate(f"unreasonable grid dims {dims}")

    frame = AffineFrame.from_spacing(spacing, origin, spec.convention)
    labels = np.zeros(tuple(dims), dtype=np.uint16)

    truths = []
    for pv, (wlo, whi) in zip(spec.vertebrae, per_vertebra):
        v_id = level_to_vid(pv.level)
        i0 = np.maximum(np.floor((wlo - origin) / spacing).astype(int) - 1, 0)
        i1 = np.minimum(np.ceil((whi - origin) / spacing).astype(int) + 2, dims)
        axes = [origin[a] + spacing[a] * np.arange(i0[a], i1[a]) for a in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        world = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        local = (world - pv.translation) @ pv.rotation
        sub = labels[i0[0]:i1[0], i0[1]:i1[1], i0[2]:i1[2]]

        rods = _local_rods(pv.shape)
        for subregion in _PAINT_ORDER:
            if subregion is Subregion.CORPUS:
                mask = _corpus_mask(pv.shape, local)
            elif subregion is Subregion.ARCUS:
                mask = _arch_mask(pv.shape, local)
            else:
                mask = _rod_mask(rods[subregion], local)
            if not mask.any():
                raise PhantomDegenerate(
                    f"{pv.level}/{subregion.value} rasterized to zero voxels "
                    f"at spacing {tuple(spacing)}")
            mask = mask.reshape(sub.shape)
            existing = sub[mask]
            foreign = existing[(existing != 0)
                               & (existing // dictionary.block_stride != v_id)]
            if foreign.size:
                raise PhantomDegenerate(
                    f"{pv.level}/{subregion.value} overlaps another vertebra "
                    f"(codes {sorted(set(int(c) for c in foreign))[:4]})")
            sub[mask & (sub == 0)] = dictionary.code_for(v_id, subregion)

        local_marks = _truth_landmarks(pv.shape, rods)
        local_marks.update(_truth_shifted(pv.shape, rods, v_id, local_marks))
        world_marks = {lm: pv.rotation @ p + pv.translation
                       for lm, p in local_marks.items()}
        truth_frame = LocalFrame(
            origin=pv.translation,
            superior=pv.rotation @ np.array([0.0, 0.0, 1.0]),
            posterior=pv.rotation @ np.array([0.0, -1.0, 0.0]),
            lateral=pv.rotation @ np.array([1.0, 0.0, 0.0]),
        )
        truths.append(VertebraTruth(v_id=v_id, level=pv.level, frame=truth_frame,
                                    landmarks=world_marks,
                                    tangent=-truth_frame.superior))

    vol = LabelVolume(labels=labels, frame=frame)
    return vol, PhantomTruth(vertebrae=tuple(truths), convention=spec.convention)


def generate_vertebra(spec: PhantomSpec) -> tuple[LabelVolume, PhantomTruth]:
    """Single-vertebra phantom: one posed vertebra on its own grid."""
    if len(spec.vertebrae) != 1:
        raise PhantomDegenerate("generate_vertebra expects exactly one vertebra")
    return generate(spec)


def generate_spine(shapes: Sequence[tuple[str, VertebraShape]], curvature_deg: float = 0.0,
                   level_spacing_mm: float = 32.0, spacing=(1.0, 1.0, 1.0),
                   convention: Convention = Convention.RAS,
                   margin_mm: float = 6.0) -> tuple[LabelVolume, PhantomTruth]:
    """Stack vertebrae along a circular arc realizing a lateral curvature.

    The per-level tangent rotates in equal increments of
    curvature/(n-1) about the anterior axis, so the curve bends laterally
    (scoliosis-like) while every posterior direction stays exact.
    """
    n = len(shapes)
    if n < 2:
        raise PhantomDegenerate("a spine phantom needs at least 2 vertebrae")
    theta = math.radians(curvature_deg)
    dphi = theta / (n - 1) if n > 1 else 0.0
    chord = level_spacing_mm if theta == 0.0 else \
        2.0 * (level_spacing_mm * (n - 1) / theta) * math.sin(0.5 * dphi)

    posed = []
    pos = np.zeros(3)
    for k, (level, shape) in enumerate(shapes):
        phi = -0.5 * theta + k * dphi
        rot = rotation_matrix(ry_deg=math.degrees(phi))
        posed.append(PosedVertebra(level=level, shape=shape, rotation=rot,
                                   translation=pos.copy()))
        if k + 1 < n:
            mid = rotation_matrix(ry_deg=math.degrees(phi + 0.5 * dphi))
            pos = pos - chord * (mid @ np.array([0.0, 0.0, 1.0]))

    spec = PhantomSpec(vertebrae=tuple(posed), spacing=tuple(spacing),
                       convention=convention, margin_mm=margin_mm)
    return generate(spec)


# Backward spinosus blade used in stacked spines; a plunging rod cannot pass
# between consecutive arches.
_SPINE_SPINOSUS_DIR = (0.0, -0.97, -0.243)


def default_spine_spec(n_levels: int = 24, start_level: str = "C1") -> list[tuple[str, VertebraShape]]:
    first = level_to_vid(start_level)
    return [
        (vid_to_level(v), replace(default_shape(v), spinosus_direction=_SPINE_SPINOSUS_DIR))
        for v in range(first, first + n_levels)
    ]


# ---------------------------------------------------------------------------
# Seeded evaluation suite
# ---------------------------------------------------------------------------

def _jitter_shape(rng: np.random.Generator, v_id: int) -> VertebraShape:
    base = default_shape(v_id)
    scale = rng.uniform(0.9, 1.1)
    hx, hy, hz = (np.array(base.corpus_half) * scale).tolist()
    # Side asymmetries are anti-correlated (one long, one short) as in real
    # skewed posterior elements; they hit the all-posterior union hardest.
    costal_asym = float(rng.uniform(0.15, 0.45) * rng.choice([-1.0, 1.0]))
    sup_asym = float(rng.uniform(0.1, 0.35) * rng.choice([-1.0, 1.0]))
    inf_asym = float(rng.uniform(0.1, 0.35) * rng.choice([-1.0, 1.0]))
    costal = base.costal_length_left * 1.25
    return replace(
        base,
        corpus_half=(hx, hy, hz),
        arch_skew_deg=float(rng.uniform(12.0, 32.0) * rng.choice([-1.0, 1.0])),
        spinosus_deflection_deg=float(rng.uniform(-8.0, 8.0)),
        costal_length_left=costal * (1.0 + costal_asym),
        costal_length_right=costal * (1.0 - costal_asym),
        sup_articular_length_left=base.sup_articular_length_left * (1.0 + sup_asym),
        sup_articular_length_right=base.sup_articular_length_right * (1.0 - sup_asym),
        inf_articular_length_left=base.inf_articular_length_left * (1.0 + inf_asym),
        inf_articular_length_right=base.inf_articular_length_right * (1.0 - inf_asym),
    )


def suite_phantoms(count: int = 90, seed: int = SUITE_SEED):
    """Seeded asymmetric single-vertebra phantoms with full 3D poses.

    Yields (spine_instance, truth) pairs; regeneration with the same seed is
    bit-identical.
    """
    children = np.random.SeedSequence(seed).spawn(count)
    for child in children:
        rng = np.random.default_rng(child)
        v_id = int(rng.integers(1, 25))
        shape = _jitter_shape(rng, v_id)
        rot = rotation_matrix(rx_deg=float(rng.uniform(-8, 8)),
                              ry_deg=float(rng.uniform(-8, 8)),
                              rz_deg=float(rng.uniform(-25, 25)))
        pose = PosedVertebra(level=vid_to_level(v_id), shape=shape, rotation=rot,
                             translation=rng.uniform(0.0, 1.0, size=3))
        vol, truth = generate(PhantomSpec(vertebrae=(pose,)))
        spine = assemble_spine(vol, default_dictionary())
        yield spine, truth


def orientation_suite(count: int = 90, seed: int = SUITE_SEED) -> list[OrientationCase]:
    """Evaluation cases (vertebra + ground-truth axes) for the method table."""
    cases = []
    for spine, truth in suite_phantoms(count, seed):
        vt = truth.vertebrae[0]
        cases.append(OrientationCase(vertebra=spine.vertebrae[0],
                                     true_up=vt.frame.superior,
                                     true_posterior=vt.frame.posterior))
    return cases


# ---------------------------------------------------------------------------
# Declarative spec files
# ---------------------------------------------------------------------------

def _shape_from_dict(v_id: int, overrides: dict) -> VertebraShape:
    base = default_shape(v_id)
    if not overrides:
        return base
    fields = {f: overrides[f] for f in overrides if f != "corpus_half"}
    if "corpus_half" in overrides:
        fields["corpus_half"] = tuple(overrides["corpus_half"])
    return replace(base, **fields)


def read_phantom_spec(path) -> dict:
    """Load a declarative phantom description (see README for the schema)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format", "spinepoi-phantom") != "spinepoi-phantom":
        raise PhantomDegenerate(f"not a phantom spec: {path}")
    return doc


def materialize_phantom(doc: dict) -> tuple[LabelVolume, PhantomTruth]:
    """Build the volume+truth a spec document describes."""
    kind = doc.get("kind", "spine")
    spacing = tuple(doc.get("spacing", (1.0, 1.0, 1.0)))
    convention = Convention(doc.get("convention", "RAS"))
    levels = doc.get("levels", [])

    def parse_level(entry):
        if isinstance(entry, str):
            return entry, {}
        return entry["level"], entry.get("shape", {})

    if kind == "vertebra":
        level, overrides = parse_level(levels[0] if levels else "L3")
        pose = doc.get("pose", {})
        rot = rotation_matrix(*pose.get("rotation_deg", (0.0, 0.0, 0.0)))
        posed = PosedVertebra(level=level,
                              shape=_shape_from_dict(level_to_vid(level), overrides),
                              rotation=rot,
                              translation=np.asarray(pose.get("translation", (0.0, 0.0, 0.0)),
                                                     dtype=float))
        return generate(PhantomSpec(vertebrae=(posed,), spacing=spacing,
                                    convention=convention))
    if kind == "spine":
        if not levels:
            shapes = default_spine_spec()
        else:
            shapes = []
            for entry in levels:
                level, overrides = parse_level(entry)
                shapes.append((level, _shape_from_dict(level_to_vid(level), overrides)))
        return generate_spine(shapes,
                              curvature_deg=float(doc.get("curvature_deg", 0.0)),
                              level_spacing_mm=float(doc.get("level_spacing_mm", 32.0)),
                              spacing=spacing, convention=convention)
    raise PhantomDegenerate(f"unknown phantom kind {kind!r}")
