"""Ground truth: semi-synthetic image pairs, control points and RMSE scoring."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .chromosome import Chromosome
from .expr import Node, const, iter_preorder, op
from .imaging import GrayImage

CSV_HEADER = ("ref_x", "ref_y", "sensed_x", "sensed_y")


@dataclass(frozen=True)
class GroundTruthTransform:
    tx_expr: Node
    ty_expr: Node

    def as_chromosome(self) -> Chromosome:
        return Chromosome(self.tx_expr, self.ty_expr)


@dataclass(frozen=True, eq=False)
class ControlPointSet:
    """Paired points: ``reference_points[i]`` corresponds to ``sensed_points[i]``.

    ``sensed_dims`` fixes the rotation centre used when a transform is applied
    to the sensed points; it may be omitted for transforms without rotations.
    """

    reference_points: np.ndarray
    sensed_points: np.ndarray
    sensed_dims: tuple[int, int] | None = None

    def __post_init__(self):
        ref = np.asarray(self.reference_points, dtype=np.float64).reshape(-1, 2)
        sen = np.asarray(self.sensed_points, dtype=np.float64).reshape(-1, 2)
        if ref.shape != sen.shape:
            raise ValueError("reference and sensed point lists differ in length")
        if ref.shape[0] < 1:
            raise ValueError("a control point set needs at least one pair")
        object.__setattr__(self, "reference_points", ref)
        object.__setattr__(self, "sensed_points", sen)

    def __len__(self):
        return self.reference_points.shape[0]


class ControlPointError(ValueError):
    pass


def control_grid(dims, n: int = 4) -> np.ndarray:
    """``n x n`` grid over the raster interior (edges excluded), as ``(x, y)`` rows."""
    width, height = dims
    gx = np.linspace(0.0, width - 1, n + 2)[1:-1]
    gy = np.linspace(0.0, height - 1, n + 2)[1:-1]
    yy, xx = np.meshgrid(gy, gx, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def make_synthetic_pair(scene: GrayImage, truth: GroundTruthTransform, sensed_dims=None):
    """Resample ``scene`` under ``truth`` to make a sensed image.

    Sensed pixel ``(x, y)`` takes the scene intensity at ``truth(x, y)``,
    bilinearly interpolated and rounded half-up; pixels whose preimage falls
    off the scene are 0. Returns ``(reference, sensed, control_points)``.
    """
    if sensed_dims is None:
        sensed_dims = scene.dims
    width, height = sensed_dims
    chrom = truth.as_chromosome()

    grid = control_grid(sensed_dims)
    gx, gy = chrom.map_points(grid[:, 0], grid[:, 1], sensed_dims)
    off = ~((gx >= 0) & (gx <= scene.width - 1) & (gy >= 0) & (gy <= scene.height - 1))
    if off.any():
        bad = ", ".join(f"({grid[i, 0]:g}, {grid[i, 1]:g})" for i in np.flatnonzero(off))
        raise ControlPointError(f"truth maps control points off-scene: {bad}")

    ys, xs = np.divmod(np.arange(width * height, dtype=np.int64), width)
    tx, ty = chrom.map_points(xs.astype(np.float64), ys.astype(np.float64), sensed_dims)
    values, inside = kernels.bilinear_sample(scene.pixels, tx, ty)
    pixels = np.where(inside, np.floor(values + 0.5), 0.0)
    sensed = GrayImage(np.clip(pixels, 0, 255).astype(np.uint8).reshape(height, width))

    points = ControlPointSet(np.column_stack([gx, gy]), grid, tuple(sensed_dims))
    return scene, sensed, points


def rmse(found: Chromosome, points: ControlPointSet) -> float:
    """Root-mean-square distance between reference points and mapped sensed points."""
    dims = points.sensed_dims or (1, 1)
    tx, ty = found.map_points(points.sensed_points[:, 0], points.sensed_points[:, 1], dims)
    dx = points.reference_points[:, 0] - tx
    dy = points.reference_points[:, 1] - ty
    return math.sqrt(float(np.mean(dx * dx + dy * dy)))


def uses_rotation(tree: Node) -> bool:
    return any(n.tag in ("rotx", "roty") for n in iter_preorder(tree))


def degrees_to_radians(tree: Node) -> Node:
    """Rewrite every angle argument (cos, sin, rotx, roty) from degrees to radians."""
    if not tree.children:
        return tree
    children = tuple(degrees_to_radians(c) for c in tree.children)
    if tree.tag in ("cos", "sin", "rotx", "roty"):
        children = (op("mul", children[0], const(math.pi / 180.0)),)
    return Node(tree.tag, children, tree.value)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_control_points(points: ControlPointSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for (rx, ry), (sx, sy) in zip(points.reference_points, points.sensed_points):
            writer.writerow([repr(float(rx)), repr(float(ry)), repr(float(sx)), repr(float(sy))])


def read_control_points(path, sensed_dims=None) -> ControlPointSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != CSV_HEADER:
        raise ControlPointError(f"line 1: expected header {','.join(CSV_HEADER)}")
    ref, sen = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise ControlPointError(f"line {lineno}: expected 4 fields, got {len(row)}")
        try:
            rx, ry, sx, sy = (float(c) for c in row)
        except ValueError:
            raise ControlPointError(f"line {lineno}: non-numeric field") from None
        if not all(math.isfinite(v) for v in (rx, ry, sx, sy)):
            raise ControlPointError(f"line {lineno}: non-finite coordinate")
        ref.append((rx, ry))
        sen.append((sx, sy))
    if not ref:
        raise ControlPointError("no control point rows")
    return ControlPointSet(np.array(ref), np.array(sen), tuple(sensed_dims) if sensed_dims else None)


# ---------------------------------------------------------------------------
# test scenes
# ---------------------------------------------------------------------------


def make_texture_scene(size: int = 256, seed: int = 0, slope: float = 2.0) -> GrayImage:
    """Seeded fractal texture with a ``1/f**slope`` amplitude spectrum.

    Stands in for a natural aerial scene: smooth large-scale structure with
    detail at every scale.
    """
    rng = np.random.default_rng(seed)
    # synthesise at twice the size and crop so the texture does not wrap
    n = 2 * size
    noise = rng.standard_normal((n, n))
    fy = np.fft.fftfreq(n)[:, None]
    fx = np.fft.fftfreq(n)[None, :]
    f = np.sqrt(fx * fx + fy * fy)
    f[0, 0] = 1.0
    spectrum = np.fft.fft2(noise) / f**slope
    spectrum[0, 0] = 0.0
    field = np.real(np.fft.ifft2(spectrum))[size // 2 : size // 2 + size, size // 2 : size // 2 + size]
    lo, hi = np.percentile(field, [0.5, 99.5])
    img = np.clip((field - lo) / (hi - lo), 0.0, 1.0) * 255.0
    return GrayImage(np.floor(img + 0.5).astype(np.uint8))
