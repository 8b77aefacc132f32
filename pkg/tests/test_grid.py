import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinepoi.errors import InvalidFrame
from spinepoi.grid import (
    AffineFrame,
    Convention,
    LabelVolume,
    OccupancyField,
    convert_convention,
    sample_occupancy,
    voxel_to_world,
    world_to_voxel,
)

from conftest import box_volume, hand_affine, hand_trilinear


def test_voxel_to_world_identity():
    frame = AffineFrame.identity()
    assert np.allclose(voxel_to_world(frame, (3.0, 4.0, 5.0)), (3, 4, 5))


def test_voxel_to_world_diagonal_spacing():
    frame = AffineFrame.from_spacing((1.0, 1.0, 3.3))
    assert np.allclose(voxel_to_world(frame, (0, 0, 2)), (0, 0, 6.6))


def test_voxel_to_world_matches_hand_product():
    # 90 degree rotation about z plus a translation, checked against an
    # explicit 4x4 multiply
    m = np.array([
        [0.0, -1.0, 0.0, 10.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    frame = AffineFrame(m)
    p = (1.0, 0.0, 0.0)
    assert np.allclose(voxel_to_world(frame, p), hand_affine(m, p), atol=1e-15)


def test_world_to_voxel_trivial_cases():
    assert np.allclose(world_to_voxel(AffineFrame.identity(), (3, 4, 5)), (3, 4, 5))
    frame = AffineFrame.from_spacing((2, 2, 2))
    assert np.allclose(world_to_voxel(frame, (4, 4, 4)), (2, 2, 2))


def test_round_trip_random_affines():
    rng = np.random.default_rng(7)
    for _ in range(20):
        m = np.eye(4)
        m[:3, :3] = rng.normal(size=(3, 3))
        if abs(np.linalg.det(m[:3, :3])) < 1e-2:
            continue
        m[:3, 3] = rng.normal(scale=50, size=3)
        frame = AffineFrame(m)
        pts = rng.normal(scale=100, size=(50, 3))
        back = voxel_to_world(frame, world_to_voxel(frame, pts))
        assert np.abs(back - pts).max() < 1e-9


def test_singular_affine_rejected():
    m = np.eye(4)
    m[0, 0] = 0.0
    with pytest.raises(InvalidFrame):
        AffineFrame(m)
    bad_row = np.eye(4)
    bad_row[3] = (0, 0, 1, 1)
    with pytest.raises(InvalidFrame):
        AffineFrame(bad_row)


def test_convert_convention_definition():
    assert np.allclose(convert_convention((1.0, 2.0, 3.0), Convention.RAS, Convention.LPS),
                       (-1, -2, 3))
    assert np.allclose(convert_convention((0.0, 0.0, 7.0), Convention.LPS, Convention.RAS),
                       (0, 0, 7))


@given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3))
def test_convert_convention_involution(coords):
    p = np.array(coords)
    there = convert_convention(p, Convention.RAS, Convention.LPS)
    back = convert_convention(there, Convention.LPS, Convention.RAS)
    assert np.array_equal(back, p)


@settings(max_examples=50)
@given(st.integers(0, 2 ** 31 - 1))
def test_convert_convention_preserves_distance(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(scale=100, size=(2, 3))
    fa = convert_convention(a, Convention.RAS, Convention.LPS)
    fb = convert_convention(b, Convention.RAS, Convention.LPS)
    assert np.isclose(np.linalg.norm(a - b), np.linalg.norm(fa - fb))


# ---------------------------------------------------------------------------
# Occupancy sampling
# ---------------------------------------------------------------------------

def _single_voxel_volume():
    labels = np.zeros((5, 5, 5), dtype=np.uint8)
    labels[2, 2, 2] = 3
    return LabelVolume(labels=labels, frame=AffineFrame.identity())


def test_occupancy_at_center_of_surrounded_voxel():
    labels = np.ones((5, 5, 5), dtype=np.uint8)
    vol = LabelVolume(labels=labels, frame=AffineFrame.identity())
    assert sample_occupancy(vol, {1}, (2.0, 2.0, 2.0)) == 1.0


def test_occupancy_midpoint_is_half():
    vol = _single_voxel_volume()
    assert sample_occupancy(vol, {3}, (2.0, 2.0, 2.5)) == 0.5


def test_occupancy_matches_hand_trilinear():
    rng = np.random.default_rng(11)
    labels = (rng.random((7, 6, 5)) < 0.4).astype(np.uint8) * 9
    m = np.eye(4)
    m[:3, :3] = np.diag((0.7, 1.1, 2.0))
    m[:3, 3] = (-1.0, 2.0, 0.5)
    vol = LabelVolume(labels=labels, frame=AffineFrame(m))
    for _ in range(50):
        p = rng.uniform(-3, 12, size=3)
        want = hand_trilinear(labels, {9}, vol.frame.inverse, p)
        got = sample_occupancy(vol, {9}, p)
        assert abs(got - want) < 1e-12


def test_occupancy_offset_quarter_voxel():
    vol = _single_voxel_volume()
    p = (2.0, 2.0, 2.25)
    want = hand_trilinear(vol.labels, {3}, vol.frame.inverse, p)
    assert abs(sample_occupancy(vol, {3}, p) - want) < 1e-12
    assert abs(want - 0.75) < 1e-12


def test_occupancy_outside_grid_is_zero():
    vol = _single_voxel_volume()
    assert sample_occupancy(vol, {3}, (50.0, 0.0, 0.0)) == 0.0
    # blending into the padding region decays toward zero
    assert sample_occupancy(vol, {3}, (-0.4, 2.0, 2.0)) == 0.0


def test_occupancy_exact_indicator_at_voxel_centers():
    rng = np.random.default_rng(3)
    labels = (rng.random((6, 6, 6)) < 0.5).astype(np.uint8) * 2
    vol = LabelVolume(labels=labels, frame=AffineFrame.identity())
    for idx in rng.integers(0, 6, size=(30, 3)):
        val = sample_occupancy(vol, {2}, idx.astype(float))
        assert val == (1.0 if labels[tuple(idx)] == 2 else 0.0)


def test_occupancy_lipschitz_continuity():
    rng = np.random.default_rng(5)
    labels = (rng.random((12, 12, 12)) < 0.5).astype(np.uint8)
    vol = LabelVolume(labels=labels,
                      frame=AffineFrame.from_spacing((0.1, 0.1, 0.1)))
    pts = rng.uniform(0, 1.2, size=(200, 3))
    eps = rng.normal(size=(200, 3))
    eps = eps / np.linalg.norm(eps, axis=1, keepdims=True) * 1e-6
    a = sample_occupancy(vol, {1}, pts)
    b = sample_occupancy(vol, {1}, pts + eps)
    assert np.abs(a - b).max() < 1e-4


def test_occupancy_field_matches_full_volume():
    vol = box_volume((0, 0, 0), (6, 4, 8))
    occ = OccupancyField(vol, {7})
    rng = np.random.default_rng(4)
    pts = rng.uniform(-5, 12, size=(300, 3))
    full = sample_occupancy(vol, {7}, pts)
    assert np.array_equal(occ.sample(pts), full)


def test_label_volume_immutable():
    vol = _single_voxel_volume()
    with pytest.raises(ValueError):
        vol.labels[0, 0, 0] = 5
