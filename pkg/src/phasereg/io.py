"""Image ingest, frame rendering and run artifacts (PNG, CSV, manifest, raw grids).

Image orientation: pixel row 0 is the top edge ``x2 = +L`` and columns run
along ``x1``, so ``field[i, j] == image[N - 1 - j, i]``.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image
from skimage import draw, measure

METRICS_SCHEMA = "1"
METRICS_COLUMNS = ("iteration", "E", "grad_norm", "component_count")
CONTOUR_RGB = (255, 0, 255)


class ImageFormatError(ValueError):
    pass


def image_to_field(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(img)[::-1, :].T)


def field_to_image(fld: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(fld).T[::-1, :])


def _nearest_indices(src: int, dst: int) -> np.ndarray:
    return np.minimum(((np.arange(dst) + 0.5) * src / dst).astype(int), src - 1)


def load_image(path: str | Path, N: int, threshold: int = 128, soft: bool = False) -> np.ndarray:
    """Read an 8-bit grayscale PNG/PGM as a binary ``N x N`` field.

    ``soft=True`` skips thresholding and returns gray levels scaled to [0, 1].
    """
    try:
        im = Image.open(path)
        im.load()
    except FileNotFoundError:
        raise
    except Exception as exc:  # Pillow raises a zoo of types for bad files
        raise ImageFormatError(f"cannot read image {path}: {exc}") from exc
    if im.mode in ("RGB", "RGBA", "CMYK", "YCbCr", "LAB", "HSV", "LA", "PA"):
        raise ImageFormatError(
            f"{path} is a {im.mode} image; convert to grayscale (8-bit 'L') first")
    if im.mode == "P":
        raise ImageFormatError(f"{path} is a palette image; convert to grayscale first")
    if im.mode == "1":
        im = im.convert("L")
    if im.mode != "L":
        raise ImageFormatError(f"{path}: unsupported mode {im.mode}; expected 8-bit grayscale")
    arr = np.asarray(im)
    rows = _nearest_indices(arr.shape[0], N)
    cols = _nearest_indices(arr.shape[1], N)
    sub = arr[np.ix_(rows, cols)]
    img = sub / 255.0 if soft else (sub >= threshold).astype(float)
    return image_to_field(img)


@dataclass
class Frame:
    """Grayscale render of a field plus its level-set polylines (image coords)."""

    gray: np.ndarray
    contours: list

    def to_rgb(self) -> np.ndarray:
        rgb = np.repeat(self.gray[:, :, None], 3, axis=2)
        h, w = self.gray.shape
        for c in self.contours:
            pts = np.rint(c).astype(int)
            for (r0, c0), (r1, c1) in zip(pts[:-1], pts[1:]):
                rr, cc = draw.line(r0, c0, r1, c1)
                ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
                rgb[rr[ok], cc[ok]] = CONTOUR_RGB
        return rgb


def render_frame(fld: np.ndarray, contour_level: float | None = 0.5) -> Frame:
    """Render ``fld`` (values clipped to [0, 1]) with its ``contour_level`` curve."""
    img = field_to_image(np.asarray(fld, dtype=float))
    gray = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    contours = [] if contour_level is None else measure.find_contours(img, contour_level)
    return Frame(gray, contours)


def save_png(path: str | Path, arr: np.ndarray) -> None:
    # fixed compression level and no metadata keep the bytes reproducible
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path, format="PNG", compress_level=6)


def save_field_png(path: str | Path, fld: np.ndarray, contour_level: float | None = 0.5) -> None:
    frame = render_frame(fld, contour_level)
    save_png(path, frame.to_rgb() if contour_level is not None else frame.gray)


# --- raw grids -----------------------------------------------------------------

_GRID_HEADER = struct.Struct("<qqdd")


def write_grids(path: str | Path, grids: np.ndarray, p: float = 0.0, r: float = 0.0) -> None:
    """Controls-container layout: header ``(N, count + 1, p, r)`` then float64 grids."""
    grids = np.asarray(grids, dtype=float)
    if grids.ndim == 2:
        grids = grids[None]
    with open(path, "wb") as fh:
        fh.write(_GRID_HEADER.pack(grids.shape[1], grids.shape[0] + 1, p, r))
        fh.write(np.ascontiguousarray(grids, dtype="<f8").tobytes())


def read_grids(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        N, T, _, _ = _GRID_HEADER.unpack(fh.read(_GRID_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(T - 1, N, N).astype(float)


# --- manifest and metrics ----------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def write_manifest(path: str | Path, entries: Mapping[str, object]) -> None:
    """One ``key = value`` line per entry, in the given order."""
    lines = [f"{k} = {_fmt(v)}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> dict[str, str]:
    return parse_key_values(Path(path).read_text())


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value', got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_metrics(path: str | Path, rows: Iterable[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for it, E, gn, cc in rows:
            w.writerow([it, repr(float(E)), repr(float(gn)), cc])
