"""Per-vertebra orthonormal coordinate frames.

The cranio-caudal (up) axis comes from the centerline spline; the posterior
axis is estimated from the posterior subregion masks by one of three
strategies and re-orthogonalized against up; the lateral axis completes the
right-handed triad. In RAS the lateral axis (superior x posterior) points to
the subject's anatomical right, so "left" landmarks use the negated lateral
axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .anatomy import POSTERIOR_SUBREGIONS, Subregion, VertebraInstance
from .errors import DegenerateOrientation, EmptySubregion

__all__ = [
    "OrientationMethod",
    "LocalFrame",
    "OrientationStats",
    "OrientationCase",
    "posterior_raw",
    "orthogonalize",
    "build_frame",
    "angular_deviation",
    "evaluate_orientation",
    "report_rows",
    "report_csv",
    "report_json",
]


class OrientationMethod(str, Enum):
    """Posterior-direction strategies, worst to best on asymmetric anatomy."""

    CMS3D_ALL = "cms3d-all"          # 3D CMS of all posterior structures
    CMS3D_ARCSPIN = "cms3d-arcspin"  # 3D CMS of arcus + spinosus
    PROJECTION_2D = "proj2d"         # 2D footprint centroid of arcus + spinosus


@dataclass(frozen=True)
class LocalFrame:
    """Orthonormal (superior, posterior, lateral) triad at the corpus center."""

    origin: np.ndarray
    superior: np.ndarray
    posterior: np.ndarray
    lateral: np.ndarray

    def __post_init__(self):
        for name in ("origin", "superior", "posterior", "lateral"):
            v = np.asarray(getattr(self, name), dtype=float)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        for name in ("superior", "posterior", "lateral"):
            n = np.linalg.norm(getattr(self, name))
            if abs(n - 1.0) > 1e-9:
                raise DegenerateOrientation(f"{name} axis is not unit length (|v|={n})")
        if abs(float(self.superior @ self.posterior)) > 1e-9:
            raise DegenerateOrientation("superior and posterior axes are not orthogonal")
        if np.max(np.abs(np.cross(self.superior, self.posterior) - self.lateral)) > 1e-9:
            raise DegenerateOrientation("lateral axis is not superior x posterior")

    @property
    def inferior(self) -> np.ndarray:
        return -self.superior

    @property
    def anterior(self) -> np.ndarray:
        return -self.posterior

    @property
    def left(self) -> np.ndarray:
        return -self.lateral

    @property
    def right(self) -> np.ndarray:
        return self.lateral

    def as_matrix(self) -> np.ndarray:
        """Axes as rows: superior, posterior, lateral."""
        return np.stack([self.superior, self.posterior, self.lateral])


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _plane_basis(up: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal basis of the plane orthogonal to up."""
    ref = np.zeros(3)
    ref[int(np.argmin(np.abs(up)))] = 1.0
    e1 = _unit(np.cross(up, ref))
    e2 = np.cross(up, e1)
    return e1, e2


_ARCSPIN = (Subregion.ARCUS, Subregion.SPINOSUS)


def posterior_raw(vertebra: VertebraInstance, up: np.ndarray,
                  method: OrientationMethod) -> np.ndarray:
    """Unnormalized posterior-direction estimate for one vertebra.

    * CMS3D_ALL: CMS of the union of all eight posterior subregions minus
      the corpus CMS.
    * CMS3D_ARCSPIN: same with only arcus and spinosus.
    * PROJECTION_2D: arcus+spinosus voxel centers are projected onto the
      plane through the corpus CMS orthogonal to ``up``; the projected mask
      footprint is deduplicated on an in-plane grid at the finest voxel
      spacing, its 2D centroid re-embedded in 3D, and the corpus CMS
      subtracted. Collapsing stacked voxels to one footprint cell is what
      removes out-of-plane asymmetry; keeping multiplicities would reduce to
      CMS3D_ARCSPIN after orthogonalization.
    """
    up = _unit(np.asarray(up, dtype=float))
    corpus = vertebra.center_of_mass(Subregion.CORPUS)
    method = OrientationMethod(method)

    if method is OrientationMethod.CMS3D_ALL:
        raw = vertebra.center_of_mass(*POSTERIOR_SUBREGIONS) - corpus
    elif method is OrientationMethod.CMS3D_ARCSPIN:
        raw = vertebra.center_of_mass(*_ARCSPIN) - corpus
    else:
        centers = vertebra.world_voxel_centers(*_ARCSPIN)
        if centers.shape[0] == 0:
            raise EmptySubregion(f"{vertebra.level}: empty subregion(s) arcus, spinosus")
        e1, e2 = _plane_basis(up)
        rel = centers - corpus
        h = float(np.min(vertebra.volume.frame.spacing))
        cells = np.unique(
            np.stack([np.round(rel @ e1 / h), np.round(rel @ e2 / h)], axis=1),
            axis=0,
        )
        uv = cells.mean(axis=0) * h
        raw = uv[0] * e1 + uv[1] * e2

    if np.linalg.norm(raw) < 1e-6:
        raise DegenerateOrientation(
            f"{vertebra.level}: posterior estimate vanished ({method.value})"
        )
    return raw


def orthogonalize(posterior_raw_vec: np.ndarray, up: np.ndarray) -> np.ndarray:
    """Remove the up-component from the raw posterior vector and normalize."""
    up = _unit(np.asarray(up, dtype=float))
    raw = np.asarray(posterior_raw_vec, dtype=float)
    orth = raw - (raw @ up) * up
    n = np.linalg.norm(orth)
    # sin(angle to up) below 1e-4 rad counts as parallel
    if n < 1e-4 * np.linalg.norm(raw):
        raise DegenerateOrientation("posterior estimate is parallel to the up axis")
    return orth / n


def build_frame(origin: np.ndarray, up: np.ndarray, posterior: np.ndarray) -> LocalFrame:
    """Complete the triad: lateral = superior x posterior (anatomical right in RAS)."""
    up = _unit(np.asarray(up, dtype=float))
    posterior = np.asarray(posterior, dtype=float)
    if abs(np.linalg.norm(posterior) - 1.0) > 1e-6:
        raise ValueError("posterior must be a unit vector")
    if abs(float(up @ posterior)) > 1e-6:
        raise ValueError("up and posterior must be orthogonal")
    posterior = posterior - (posterior @ up) * up
    posterior = _unit(posterior)
    lateral = _unit(np.cross(up, posterior))
    return LocalFrame(origin=np.asarray(origin, dtype=float), superior=up,
                      posterior=posterior, lateral=lateral)


def angular_deviation(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two unit vectors in degrees, in [0, 180]."""
    d = float(np.clip(np.dot(a, b), -1.0, 1.0))
    return float(np.degrees(np.arccos(d)))


@dataclass(frozen=True)
class OrientationStats:
    method: str
    mean_deg: float
    std_deg: float
    frac_le_3: float
    frac_le_10: float
    n: int

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        if self.frac_le_3 > self.frac_le_10 + 1e-12:
            raise ValueError("frac_le_3 cannot exceed frac_le_10")


@dataclass(frozen=True)
class OrientationCase:
    """One evaluation case: a vertebra plus its ground-truth axes."""

    vertebra: VertebraInstance
    true_up: np.ndarray
    true_posterior: np.ndarray


def angular_errors(cases: Sequence[OrientationCase],
                   method: OrientationMethod) -> np.ndarray:
    """Per-case posterior angular error in degrees; NaN marks a failed case.

    The ground-truth up axis is fed to every method so the comparison
    isolates the posterior estimators themselves.
    """
    errs = np.empty(len(cases))
    for i, case in enumerate(cases):
        try:
            raw = posterior_raw(case.vertebra, case.true_up, method)
            est = orthogonalize(raw, case.true_up)
            errs[i] = angular_deviation(est, _unit(np.asarray(case.true_posterior, float)))
        except (EmptySubregion, DegenerateOrientation):
            errs[i] = np.nan
    return errs


def stats_from_errors(method: OrientationMethod, errs) -> OrientationStats:
    """Aggregate per-case angular errors (NaN = recorded failure).

    Failed cases count toward n but satisfy neither threshold bucket; mean
    and population std are taken over the successful cases.
    """
    errs = np.asarray(errs, dtype=float)
    if errs.size == 0:
        raise ValueError("need at least one evaluation case")
    ok = errs[~np.isnan(errs)]
    n = len(errs)
    if ok.size == 0:
        mean = std = float("nan")
    else:
        mean = float(ok.mean())
        std = float(ok.std())  # population std
    return OrientationStats(
        method=OrientationMethod(method).value,
        mean_deg=mean,
        std_deg=std,
        frac_le_3=float(np.sum(ok <= 3.0) / n),
        frac_le_10=float(np.sum(ok <= 10.0) / n),
        n=n,
    )


def evaluate_orientation(cases: Sequence[OrientationCase],
                         method: OrientationMethod) -> OrientationStats:
    """Angular-error statistics of one method over a ground-truth suite."""
    return stats_from_errors(method, angular_errors(cases, method))


_REPORT_COLUMNS = ("method", "mean_deg", "std_deg", "frac_le_3", "frac_le_10", "n")


def report_rows(stats: Iterable[OrientationStats]) -> list[dict]:
    return [
        {
            "method": s.method,
            "mean_deg": round(s.mean_deg, 4),
            "std_deg": round(s.std_deg, 4),
            "frac_le_3": round(s.frac_le_3, 4),
            "frac_le_10": round(s.frac_le_10, 4),
            "n": s.n,
        }
        for s in stats
    ]


def report_csv(stats: Iterable[OrientationStats]) -> str:
    lines = [",".join(_REPORT_COLUMNS)]
    for row in report_rows(stats):
        lines.append(",".join(str(row[c]) for c in _REPORT_COLUMNS))
    return "\n".join(lines) + "\n"


def report_json(stats: Iterable[OrientationStats]) -> str:
    return json.dumps({"columns": list(_REPORT_COLUMNS),
                       "rows": report_rows(stats)}, indent=2) + "\n"
