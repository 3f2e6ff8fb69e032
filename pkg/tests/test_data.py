import numpy as np
from scipy import ndimage

from acs3d.data import (GRID, PIECE, ShapeRecord, class_targets, gen2d, gen3d,
                        load_dataset, rasterize_2d, rasterize_3d, save_dataset)


def test_determinism_bit_identical():
    a = gen2d(5, 42)
    b = gen2d(5, 42)
    for s, t in zip(a, b):
        assert np.array_equal(s.image, t.image)
        assert np.array_equal(s.mask, t.mask)
        assert s.shapes == t.shapes
    a3 = gen3d(3, 42)
    b3 = gen3d(3, 42)
    for s, t in zip(a3, b3):
        assert np.array_equal(s.image, t.image)
        assert np.array_equal(s.mask, t.mask)


def test_samples_are_prefix_stable():
    # per-sample seed streams: sample i is independent of n
    short = gen2d(3, 7)
    long = gen2d(6, 7)
    for s, t in zip(short, long[:3]):
        assert np.array_equal(s.image, t.image)


def test_gen2d_three_components_in_quadrants():
    for s in gen2d(20, 0, noise=False):
        labeled, count = ndimage.label(s.mask > 0)
        assert count == 3
        quadrants = set()
        for rec in s.shapes:
            if rec.kind == "circle":
                cy, cx, _ = rec.params
            else:
                ty, tx, side = rec.params
                cy, cx = ty + side // 2, tx + side // 2
            quadrants.add((cy // PIECE, cx // PIECE))
        assert len(quadrants) == 3


def test_gen2d_noiseless_is_indicator():
    for s in gen2d(5, 1, noise=False):
        np.testing.assert_array_equal(s.image[0], (s.mask > 0).astype(np.float32))


def test_gen2d_noise_statistics():
    samples = gen2d(40, 2)
    residuals = np.concatenate([
        (s.image[0] - (s.mask > 0)).ravel() for s in samples])
    assert abs(residuals.mean()) < 0.01
    assert abs(residuals.std() - 0.5) < 0.01


def test_gen2d_variance_flag():
    samples = gen2d(40, 2, noise_as_variance=True)
    residuals = np.concatenate([
        (s.image[0] - (s.mask > 0)).ravel() for s in samples])
    assert abs(residuals.std() - np.sqrt(0.5)) < 0.01


def test_gen2d_class_balance_over_1000_samples():
    counts = {1: 0, 2: 0}
    for s in gen2d(1000, 3, noise=False):
        for rec in s.shapes:
            counts[1 if rec.kind == "circle" else 2] += 1
    ratio = counts[1] / counts[2]
    assert 0.9 <= ratio <= 1.1


def test_sphere_voxel_count_near_analytic_volume():
    rec = ShapeRecord("sphere", (24, 24, 24, 10))
    count = int(rasterize_3d(rec).sum())
    expect = 4.0 / 3.0 * np.pi * 10**3
    assert abs(count - expect) / expect < 0.05


def test_cube_voxel_count_exact():
    rec = ShapeRecord("cube", (5, 5, 5, 9))
    assert int(rasterize_3d(rec).sum()) == 9**3


def test_gen3d_four_components_distinct_octants():
    for s in gen3d(10, 4, noise=False):
        labeled, count = ndimage.label(s.mask > 0)
        assert count == 4
        octants = set()
        for z, y, x in ndimage.center_of_mass(s.mask > 0, labeled, range(1, count + 1)):
            octants.add((int(z) // PIECE, int(y) // PIECE, int(x) // PIECE))
        assert len(octants) == 4


def test_gen3d_class_ids_match_kinds():
    kind_of = {1: "sphere", 2: "cube", 3: "cylinder", 4: "cone", 5: "pyramid"}
    for s in gen3d(10, 5, noise=False):
        present = set(np.unique(s.mask)) - {0}
        kinds = {rec.kind for rec in s.shapes}
        assert {kind_of[c] for c in present} == kinds


def test_rerasterizing_records_reproduces_mask():
    for s in gen3d(5, 6, noise=False):
        rebuilt = np.zeros_like(s.mask)
        ids = {"sphere": 1, "cube": 2, "cylinder": 3, "cone": 4, "pyramid": 5}
        for rec in s.shapes:
            rebuilt[rasterize_3d(rec)] = ids[rec.kind]
        np.testing.assert_array_equal(rebuilt, s.mask)
    for s in gen2d(5, 6, noise=False):
        rebuilt = np.zeros_like(s.mask)
        for rec in s.shapes:
            rebuilt[rasterize_2d(rec)] = 1 if rec.kind == "circle" else 2
        np.testing.assert_array_equal(rebuilt, s.mask)


def test_central_slices_project_to_2d_shapes():
    # a sphere's central depth slice is exactly the circle rasterization
    sphere = ShapeRecord("sphere", (20, 22, 25, 8))
    circle = ShapeRecord("circle", (22, 25, 8))
    np.testing.assert_array_equal(rasterize_3d(sphere)[20], rasterize_2d(circle))
    # a cube's any-depth slice inside the cube is exactly the square
    cube = ShapeRecord("cube", (10, 12, 14, 9))
    square = ShapeRecord("square", (12, 14, 9))
    np.testing.assert_array_equal(rasterize_3d(cube)[13], rasterize_2d(square))


def test_shapes_fit_inside_their_pieces():
    for s in gen3d(20, 8, noise=False):
        labeled, count = ndimage.label(s.mask > 0)
        for idx in range(1, count + 1):
            zs, ys, xs = np.nonzero(labeled == idx)
            assert zs.min() // PIECE == zs.max() // PIECE
            assert ys.min() // PIECE == ys.max() // PIECE
            assert xs.min() // PIECE == xs.max() // PIECE


def test_random_orientation_flag_changes_some_samples():
    fixed = gen3d(20, 9, noise=False)
    flipped = gen3d(20, 9, noise=False, random_orientation=True)
    assert any(not np.array_equal(a.mask, b.mask) for a, b in zip(fixed, flipped))


def test_class_targets_one_hot():
    mask = np.array([[0, 1], [2, 1]], dtype=np.uint8)
    t = class_targets(mask, 2)
    np.testing.assert_array_equal(t[0], [[0, 1], [0, 1]])
    np.testing.assert_array_equal(t[1], [[0, 0], [1, 0]])
    assert t.dtype == np.float32


def test_dataset_container_roundtrip(tmp_path):
    samples = gen3d(3, 10)
    p = tmp_path / "d.acsw"
    save_dataset(samples, p)
    pairs = load_dataset(p)
    assert len(pairs) == 3
    for (img, mask), s in zip(pairs, samples):
        np.testing.assert_array_equal(img, s.image)
        np.testing.assert_array_equal(mask, s.mask)
        assert mask.dtype == np.uint8
    assert samples[0].image.shape == (1, GRID, GRID, GRID)
