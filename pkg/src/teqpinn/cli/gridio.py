"""CSV grids and PPM heatmaps."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from ..pde import SolutionGrid

FLOAT_FMT = "%.17g"


class GridFormatError(ValueError):
    pass


def grid_to_csv(grid: SolutionGrid) -> str:
    pts = grid.points()
    data = np.column_stack([pts, grid.values.ravel()])
    buf = io.StringIO()
    buf.write(",".join([*grid.names, "u"]) + "\n")
    np.savetxt(buf, data, fmt=FLOAT_FMT, delimiter=",")
    return buf.getvalue()


def write_csv(path: str | Path, grid: SolutionGrid) -> None:
    Path(path).write_text(grid_to_csv(grid))


def csv_to_grid(text: str) -> SolutionGrid:
    """Parse ``x[,y],t,u`` rows back into a grid; rows must cover a full Cartesian product."""
    lines = text.splitlines()
    if not lines:
        raise GridFormatError("empty CSV")
    header = [h.strip() for h in lines[0].split(",")]
    if len(header) < 2 or header[-1] != "u":
        raise GridFormatError(f"unexpected header {lines[0]!r}")
    body = [ln for ln in lines[1:] if ln.strip()]
    if not body:
        raise GridFormatError("CSV has no data rows")
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in body])
    except ValueError as exc:
        raise GridFormatError(str(exc)) from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise GridFormatError("ragged CSV rows")
    coords = data[:, :-1]
    axes = [np.unique(coords[:, d]) for d in range(coords.shape[1])]
    shape = tuple(len(a) for a in axes)
    if int(np.prod(shape)) != len(data):
        raise GridFormatError("points do not form a rectangular grid")
    idx = [np.searchsorted(a, coords[:, d]) for d, a in enumerate(axes)]
    flat = np.ravel_multi_index(idx, shape)
    if len(np.unique(flat)) != len(flat):
        raise GridFormatError("duplicate grid points")
    values = np.empty(len(data))
    values[flat] = data[:, -1]
    return SolutionGrid(axes, values.reshape(shape), header[:-1])


def read_csv(path: str | Path) -> SolutionGrid:
    return csv_to_grid(Path(path).read_text())


def colormap(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Blue (lo) to white (midpoint) to red (hi); uint8 RGB with a trailing channel axis."""
    if not hi > lo:
        raise ValueError("colour range needs hi > lo")
    s = np.clip((np.asarray(values, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
    up = np.floor(255.0 * np.minimum(2 * s, 1.0) + 0.5)
    down = np.floor(255.0 * np.minimum(2 - 2 * s, 1.0) + 0.5)
    rgb = np.stack([up, np.minimum(up, down), down], axis=-1)
    return rgb.astype(np.uint8)


def default_range(values: np.ndarray) -> tuple[float, float]:
    m = float(np.max(np.abs(values))) if np.size(values) else 0.0
    m = m if m > 0 else 1.0
    return -m, m


def ppm_bytes(image: np.ndarray) -> bytes:
    h, w, _ = image.shape
    return f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(image, dtype=np.uint8).tobytes()


def heatmap(field2d: np.ndarray, lo: float | None = None, hi: float | None = None) -> bytes:
    """P6 image of a (horizontal, vertical) array.

    The first axis runs left to right and the second bottom to top.
    """
    field2d = np.asarray(field2d, dtype=np.float64)
    if field2d.ndim != 2:
        raise GridFormatError("heatmap needs a 2-axis field")
    if lo is None or hi is None:
        dlo, dhi = default_range(field2d)
        lo = dlo if lo is None else lo
        hi = dhi if hi is None else hi
    # image rows go top to bottom, so flip the vertical axis
    img = colormap(field2d.T[::-1, :], lo, hi)
    return ppm_bytes(img)


def slice_for_plot(grid: SolutionGrid, t: float | None = None) -> tuple[np.ndarray, float | None]:
    """Reduce a grid to 2 axes: (x, t) as is, or (x, y) at the time nearest ``t`` (default last)."""
    if grid.values.ndim == 2:
        return grid.values, None
    if grid.values.ndim == 3:
        times = grid.axes[-1]
        k = len(times) - 1 if t is None else int(np.argmin(np.abs(times - t)))
        return grid.values[..., k], float(times[k])
    raise GridFormatError(f"cannot plot a {grid.values.ndim}-axis grid")


def write_ppm(path: str | Path, field2d: np.ndarray, lo: float | None = None, hi: float | None = None) -> None:
    Path(path).write_bytes(heatmap(field2d, lo, hi))


def parse_ppm(data: bytes) -> np.ndarray:
    """Decode a P6 file with maxval 255 into an (h, w, 3) uint8 array."""
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise GridFormatError("not a P6 image with maxval 255")
    w, h = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8)
    if pixels.size != 3 * w * h:
        raise GridFormatError("pixel data size mismatch")
    return pixels.reshape(h, w, 3)

