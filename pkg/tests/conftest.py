"""Shared fixtures and independent oracle helpers.

Oracles here deliberately avoid the library's own sampling/search code:
trilinear interpolation is an explicit 8-corner sum, affine application an
explicit 4x4 product, and the corner oracle a plain-python replay of the
acceptance rule at 0.01 mm precision.
"""

import numpy as np
import pytest

from spinepoi.grid import AffineFrame, Convention, LabelVolume


def hand_affine(matrix, p):
    """Explicit homogeneous 4x4 multiply."""
    v = np.array([p[0], p[1], p[2], 1.0])
    out = np.zeros(4)
    for i in range(4):
        for j in range(4):
            out[i] += matrix[i][j] * v[j]
    return out[:3]


def hand_trilinear(labels, codes, inverse, p):
    """8-corner weighted sum of the binary indicator; outside corners are 0."""
    v = hand_affine(inverse, p)
    base = np.floor(v).astype(int)
    f = v - base
    total = 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                i, j, k = base + (dx, dy, dz)
                w = ((f[0] if dx else 1 - f[0])
                     * (f[1] if dy else 1 - f[1])
                     * (f[2] if dz else 1 - f[2]))
                inside = (0 <= i < labels.shape[0] and 0 <= j < labels.shape[1]
                          and 0 <= k < labels.shape[2])
                if inside and int(labels[i, j, k]) in codes:
                    total += w
    return total


def box_volume(lo, hi, spacing=(1.0, 1.0, 1.0), code=7, pad=4,
               convention=Convention.RAS):
    """Label volume holding one solid box whose faces land exactly on voxel
    boundaries (voxel centers at face +/- spacing/2)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    s = np.asarray(spacing, dtype=float)
    origin = lo - pad * s + 0.5 * s
    dims = np.round((hi - lo) / s).astype(int) + 2 * pad
    frame = AffineFrame.from_spacing(s, origin, convention)
    idx = np.stack(np.meshgrid(*[np.arange(d) for d in dims], indexing="ij"),
                   axis=-1).reshape(-1, 3).astype(float)
    world = frame.apply(idx)
    inside = np.all((world >= lo) & (world <= hi), axis=1)
    labels = np.zeros(dims, dtype=np.uint16)
    labels.reshape(-1)[inside] = code
    return LabelVolume(labels=labels, frame=frame)


def mask_volume(inside_fn, lo, hi, spacing=(1.0, 1.0, 1.0), code=7, pad=4,
                convention=Convention.RAS):
    """Label volume from an arbitrary world-space inclusion predicate."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    s = np.asarray(spacing, dtype=float)
    origin = lo - pad * s + 0.5 * s
    dims = np.round((hi - lo) / s).astype(int) + 2 * pad
    frame = AffineFrame.from_spacing(s, origin, convention)
    idx = np.stack(np.meshgrid(*[np.arange(d) for d in dims], indexing="ij"),
                   axis=-1).reshape(-1, 3).astype(float)
    world = frame.apply(idx)
    labels = np.zeros(dims, dtype=np.uint16)
    labels.reshape(-1)[inside_fn(world)] = code
    return LabelVolume(labels=labels, frame=frame)


def corner_oracle(vol, codes, start, axis_a, axis_b, sign_a, sign_b,
                  initial_step=4.0, precision=0.01):
    """Replay of the alternating budgeted corner walk at 0.01 mm resolution,
    built on the hand trilinear oracle only."""
    labels = vol.labels
    inv = vol.frame.inverse
    codes = set(int(c) for c in codes)
    a = np.asarray(axis_a, float)
    a = a / np.linalg.norm(a) * sign_a
    b = np.asarray(axis_b, float)
    b = b / np.linalg.norm(b) * sign_b
    p = np.asarray(start, float)
    budgets = [initial_step, initial_step]
    axes = (a, b)
    stop = 0.5 * precision
    probe = max(0.5 * float(np.min(vol.frame.spacing)), stop)
    while budgets[0] >= stop or budgets[1] >= stop:
        for i in (0, 1):
            s = budgets[i]
            ts = [k * probe for k in range(1, int(s / probe) + 1)]
            if not ts or ts[-1] < s - 1e-12:
                ts.append(s)
            t_best = None
            for t in ts:
                if hand_trilinear(labels, codes, inv, p + t * axes[i]) >= 0.5:
                    t_best = t
            if t_best is not None:
                p = p + t_best * axes[i]
                budgets[i] = min(2.0 * budgets[i], initial_step)
            else:
                budgets[i] *= 0.5
    return p


def dense_ray_oracle(vol, codes, origin, direction, max_travel, step=0.001):
    """Farthest 0.5-crossing by dense sampling with the library sampler is
    intentionally avoided; this uses scipy-free hand interpolation on a
    coarse pre-scan plus hand refinement."""
    from spinepoi.grid import OccupancyField

    # Coarse vectorized scan locates the bracket; the hand oracle refines it,
    # so the final value never depends on the implementation's bisection.
    occ = OccupancyField(vol, codes)
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    ts = np.arange(0.0, max_travel, 0.05)
    inside = occ.sample(np.asarray(origin) + ts[:, None] * d) >= 0.5
    t_in = ts[np.nonzero(inside)[0][-1]]
    labels, inv = vol.labels, vol.frame.inverse
    codes = set(int(c) for c in codes)
    t = t_in
    while hand_trilinear(labels, codes, inv, np.asarray(origin) + (t + step) * d) >= 0.5:
        t += step
    return np.asarray(origin) + (t + 0.5 * step) * d


@pytest.fixture(scope="session")
def suite20():
    """First 20 phantoms of the seeded evaluation suite (shared by tests)."""
    from spinepoi.phantom import suite_phantoms

    return list(suite_phantoms(count=20))
