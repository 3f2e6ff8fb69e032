"""Synthetic shape datasets: 2D circles/squares and 3D five-shape volumes.

A 48x48 image is divided into four 24x24 pieces and 3 of the 4 receive a
random-size circle or square (equal probability) at a random center; a
48x48x48 volume is divided into eight 24^3 pieces and 4 of the 8 receive
one of sphere/cube/cylinder/cone/pyramid. Shapes keep a one-voxel margin
inside their piece, so foreground components never overlap or touch.
Foreground intensity is 1 on a 0 background, plus optional per-voxel
Gaussian noise N(0, 0.5) -- by default 0.5 is the standard deviation,
with a flag to read it as the variance instead.

Each sample is generated from its own seed stream (base seed, index), so
datasets are bit-reproducible and samples may be generated in parallel or
as prefixes of longer runs.
"""

from dataclasses import dataclass

import numpy as np

from .weightio import WeightStore

GRID = 48
PIECE = 24
NOISE_LEVEL = 0.5

# class ids
CIRCLE, SQUARE = 1, 2
SPHERE, CUBE, CYLINDER, CONE, PYRAMID = 1, 2, 3, 4, 5

CLASS_NAMES_2D = {CIRCLE: "circle", SQUARE: "square"}
CLASS_NAMES_3D = {SPHERE: "sphere", CUBE: "cube", CYLINDER: "cylinder",
                  CONE: "cone", PYRAMID: "pyramid"}

_MARGIN = 1                   # empty border inside each piece
_R_MIN, _R_MAX = 4, 10        # radii (extent 2r+1 <= 21)
_SIDE_MIN, _SIDE_MAX = 8, 22  # box sides / heights (22 = PIECE - 2*margin)


def _center_range(rng, origin, radius):
    """Center so that [c - radius, c + radius] stays inside the margin."""
    lo = origin + _MARGIN + radius
    hi = origin + PIECE - _MARGIN - radius  # exclusive
    return int(rng.integers(lo, hi))


def _corner_range(rng, origin, extent):
    """Low corner so that [c, c + extent) stays inside the margin."""
    lo = origin + _MARGIN
    hi = origin + PIECE - _MARGIN - extent + 1  # exclusive
    return int(rng.integers(lo, hi))


@dataclass(frozen=True)
class ShapeRecord:
    """Geometry of one placed shape, sufficient to re-rasterize it."""

    kind: str
    params: tuple


@dataclass
class ShapeSample:
    image: np.ndarray   # (1, 48, 48) or (1, 48, 48, 48) float32
    mask: np.ndarray    # (48, 48) or (48, 48, 48) uint8 class ids
    seed: tuple
    shapes: tuple


def _coords(n):
    return np.arange(n)


def rasterize_2d(record):
    """Boolean 48x48 plane for one 2D shape record."""
    y = _coords(GRID)[:, None]
    x = _coords(GRID)[None, :]
    if record.kind == "circle":
        cy, cx, r = record.params
        return (y - cy) ** 2 + (x - cx) ** 2 <= r * r
    if record.kind == "square":
        ty, tx, side = record.params
        return (y >= ty) & (y < ty + side) & (x >= tx) & (x < tx + side)
    raise ValueError(f"unknown 2D shape kind {record.kind!r}")


def rasterize_3d(record):
    """Boolean 48^3 volume for one 3D shape record."""
    z = _coords(GRID)[:, None, None]
    y = _coords(GRID)[None, :, None]
    x = _coords(GRID)[None, None, :]
    kind = record.kind
    if kind == "sphere":
        cz, cy, cx, r = record.params
        return (z - cz) ** 2 + (y - cy) ** 2 + (x - cx) ** 2 <= r * r
    if kind == "cube":
        tz, ty, tx, side = record.params
        return ((z >= tz) & (z < tz + side) & (y >= ty) & (y < ty + side)
                & (x >= tx) & (x < tx + side))
    if kind == "cylinder":
        zs, cy, cx, r, h = record.params
        return ((z >= zs) & (z < zs + h)
                & ((y - cy) ** 2 + (x - cx) ** 2 <= r * r))
    if kind == "cone":
        zb, cy, cx, r, h, step = record.params
        frac = (z - zb) * step / (h - 1)
        radius = r * (1.0 - frac)
        ok = (frac >= 0) & (frac <= 1)
        return ok & ((y - cy) ** 2 + (x - cx) ** 2 <= radius * radius)
    if kind == "pyramid":
        zb, cy, cx, half, h, step = record.params
        frac = (z - zb) * step / (h - 1)
        hw = half * (1.0 - frac)
        ok = (frac >= 0) & (frac <= 1)
        return ok & (np.abs(y - cy) <= hw) & (np.abs(x - cx) <= hw)
    raise ValueError(f"unknown 3D shape kind {record.kind!r}")


def _noise_sigma(noise_as_variance):
    return float(np.sqrt(NOISE_LEVEL)) if noise_as_variance else NOISE_LEVEL


def _sample_2d_shape(rng, py, px):
    if rng.integers(2) == 0:
        r = int(rng.integers(_R_MIN, _R_MAX + 1))
        cy = _center_range(rng, py, r)
        cx = _center_range(rng, px, r)
        return ShapeRecord("circle", (cy, cx, r)), CIRCLE
    side = int(rng.integers(_SIDE_MIN, _SIDE_MAX + 1))
    ty = _corner_range(rng, py, side)
    tx = _corner_range(rng, px, side)
    return ShapeRecord("square", (ty, tx, side)), SQUARE


def gen2d(n, seed, noise=True, noise_as_variance=False):
    """Generate ``n`` 2D samples: 3 of 4 quadrants hold a circle or square."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pieces = [(0, 0), (0, PIECE), (PIECE, 0), (PIECE, PIECE)]
    samples = []
    for i in range(n):
        rng = np.random.default_rng((int(seed), i))
        chosen = rng.choice(4, size=3, replace=False)
        mask = np.zeros((GRID, GRID), dtype=np.uint8)
        shapes = []
        for piece_idx in chosen:
            py, px = pieces[piece_idx]
            record, cls = _sample_2d_shape(rng, py, px)
            mask[rasterize_2d(record)] = cls
            shapes.append(record)
        image = (mask > 0).astype(np.float32)
        if noise:
            image = image + rng.normal(0.0, _noise_sigma(noise_as_variance),
                                       size=image.shape).astype(np.float32)
        samples.append(ShapeSample(image[None], mask, (int(seed), i), tuple(shapes)))
    return samples


def _sample_3d_shape(rng, pz, py, px, random_orientation):
    kind = int(rng.integers(5))
    step = 1
    if random_orientation and kind in (3, 4) and rng.integers(2) == 1:
        step = -1
    if kind == 0:
        r = int(rng.integers(_R_MIN, _R_MAX + 1))
        cz = _center_range(rng, pz, r)
        cy = _center_range(rng, py, r)
        cx = _center_range(rng, px, r)
        return ShapeRecord("sphere", (cz, cy, cx, r)), SPHERE
    if kind == 1:
        side = int(rng.integers(_SIDE_MIN, _SIDE_MAX + 1))
        tz = _corner_range(rng, pz, side)
        ty = _corner_range(rng, py, side)
        tx = _corner_range(rng, px, side)
        return ShapeRecord("cube", (tz, ty, tx, side)), CUBE
    if kind == 2:
        r = int(rng.integers(_R_MIN, _R_MAX + 1))
        h = int(rng.integers(_SIDE_MIN, _SIDE_MAX + 1))
        zs = _corner_range(rng, pz, h)
        cy = _center_range(rng, py, r)
        cx = _center_range(rng, px, r)
        return ShapeRecord("cylinder", (zs, cy, cx, r, h)), CYLINDER
    r = int(rng.integers(_R_MIN, _R_MAX + 1))
    h = int(rng.integers(_SIDE_MIN, _SIDE_MAX + 1))
    z0 = _corner_range(rng, pz, h)
    zb = z0 if step == 1 else z0 + h - 1  # apex points along +depth by default
    if kind == 3:
        cy = _center_range(rng, py, r)
        cx = _center_range(rng, px, r)
        return ShapeRecord("cone", (zb, cy, cx, r, h, step)), CONE
    cy = _center_range(rng, py, r)
    cx = _center_range(rng, px, r)
    return ShapeRecord("pyramid", (zb, cy, cx, r, h, step)), PYRAMID


def gen3d(n, seed, noise=True, noise_as_variance=False, random_orientation=False):
    """Generate ``n`` 3D samples: 4 of 8 octants hold one of five shapes."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pieces = [(z, y, x) for z in (0, PIECE) for y in (0, PIECE) for x in (0, PIECE)]
    samples = []
    for i in range(n):
        rng = np.random.default_rng((int(seed), i))
        chosen = rng.choice(8, size=4, replace=False)
        mask = np.zeros((GRID, GRID, GRID), dtype=np.uint8)
        shapes = []
        for piece_idx in chosen:
            pz, py, px = pieces[piece_idx]
            record, cls = _sample_3d_shape(rng, pz, py, px, random_orientation)
            mask[rasterize_3d(record)] = cls
            shapes.append(record)
        image = (mask > 0).astype(np.float32)
        if noise:
            image = image + rng.normal(0.0, _noise_sigma(noise_as_variance),
                                       size=image.shape).astype(np.float32)
        samples.append(ShapeSample(image[None], mask, (int(seed), i), tuple(shapes)))
    return samples


def class_targets(mask, n_classes):
    """Per-class binary channels (n_classes, *mask.shape) as float32."""
    out = np.zeros((n_classes,) + mask.shape, dtype=np.float32)
    for cls in range(1, n_classes + 1):
        out[cls - 1] = mask == cls
    return out


def save_dataset(samples, path):
    """Persist samples in the weight container as sample/{i}/{image,mask}."""
    store = WeightStore()
    for i, s in enumerate(samples):
        store[f"sample/{i}/image"] = s.image.astype(np.float32)
        store[f"sample/{i}/mask"] = s.mask.astype(np.float32)
    from . import weightio

    weightio.save(store, path)


def load_dataset(path):
    """Read back (image float32, mask uint8) pairs written by save_dataset."""
    from . import weightio

    store = weightio.load(path)
    count = 0
    while f"sample/{count}/image" in store:
        count += 1
    pairs = []
    for i in range(count):
        image = store[f"sample/{i}/image"]
        mask = store[f"sample/{i}/mask"].astype(np.uint8)
        pairs.append((image, mask))
    return pairs
