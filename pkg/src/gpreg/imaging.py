"""Grayscale images: PGM/PNG I/O, forward warping and difference images."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from . import kernels
from .expr import evaluate_many

MAX_PIXELS = 1 << 31


class ImageFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale raster stored row-major as ``pixels[row, col]``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("intensities must lie in 0..255")
            px = px.astype(np.uint8)
        px = np.ascontiguousarray(px)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.width, self.height

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class RegistrationRendering:
    warped: GrayImage
    valid_mask: np.ndarray


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

_PGM_FIELD = re.compile(rb"(?:\s|#[^\n]*\n)*(\d+)")


def _read_pgm(data: bytes) -> GrayImage:
    if not data.startswith(b"P5"):
        raise ImageFormatError("unsupported format: not a binary PGM (P5) file")
    pos = 2
    fields = []
    for _ in range(3):
        m = _PGM_FIELD.match(data, pos)
        if m is None:
            raise ImageFormatError("truncated payload: incomplete PGM header")
        fields.append(int(m.group(1)))
        pos = m.end()
    if pos >= len(data) or data[pos : pos + 1] not in b" \t\r\n":
        raise ImageFormatError("truncated payload: incomplete PGM header")
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"unsupported bit depth: PGM maxval {maxval} (only 255 is supported)")
    if width < 1 or height < 1 or width * height > MAX_PIXELS:
        raise ImageFormatError(f"dimension overflow: {width}x{height}")
    payload = data[pos + 1 : pos + 1 + width * height]
    if len(payload) < width * height:
        raise ImageFormatError(f"truncated payload: expected {width * height} bytes, got {len(payload)}")
    return GrayImage(np.frombuffer(payload, dtype=np.uint8).reshape(height, width))


def _read_png(path) -> GrayImage:
    from PIL import Image

    with Image.open(path) as im:
        if im.format != "PNG":
            raise ImageFormatError(f"unsupported format: {im.format}")
        if im.mode in ("I;16", "I;16B", "I;16L", "I", "1"):
            raise ImageFormatError(f"unsupported bit depth: PNG mode {im.mode}")
        if im.mode != "L":
            raise ImageFormatError(f"unsupported format: color or alpha PNG (mode {im.mode}); only 8-bit gray is accepted")
        return GrayImage(np.array(im, dtype=np.uint8))


def load(path) -> GrayImage:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pgm":
        with open(path, "rb") as fh:
            return _read_pgm(fh.read())
    if ext == ".png":
        return _read_png(path)
    raise ImageFormatError(f"unsupported format: {ext or 'no extension'}")


def save(img: GrayImage, path) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pgm":
        with open(path, "wb") as fh:
            fh.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
            fh.write(img.pixels.tobytes())
    elif ext == ".png":
        from PIL import Image

        Image.fromarray(img.pixels, mode="L").save(path, format="PNG")
    else:
        raise ImageFormatError(f"unsupported format: {ext or 'no extension'}")


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def warp_to_reference(sensed: GrayImage, chrom, reference_dims) -> RegistrationRendering:
    """Forward-map every sensed pixel into the reference frame.

    Targets are rounded to the nearest pixel. When several sources land on the
    same target the last one in row-major source order wins. Pixels that
    receive nothing stay 0 with ``valid_mask`` False.
    """
    ref_w, ref_h = reference_dims
    ys, xs = np.divmod(np.arange(sensed.width * sensed.height, dtype=np.int64), sensed.width)
    xs = xs.astype(np.float64)
    ys = ys.astype(np.float64)
    tx = evaluate_many(chrom.x_tree, xs, ys, sensed.width, sensed.height)
    ty = evaluate_many(chrom.y_tree, xs, ys, sensed.width, sensed.height)
    out, mask = kernels.splat(sensed.pixels.reshape(-1), tx, ty, ref_h, ref_w)
    return RegistrationRendering(GrayImage(out), mask)


def difference_image(reference: GrayImage, rendering: RegistrationRendering) -> GrayImage:
    if reference.pixels.shape != rendering.warped.pixels.shape:
        raise ValueError(
            f"dimension mismatch: reference {reference.width}x{reference.height}, "
            f"rendering {rendering.warped.width}x{rendering.warped.height}"
        )
    diff = np.abs(reference.pixels.astype(np.int16) - rendering.warped.pixels.astype(np.int16))
    diff[~rendering.valid_mask] = 0
    return GrayImage(diff.astype(np.uint8))
