"""2-D function grids rendered as CSV values and 8-bit PGM images."""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import UnsupportedError, ValidationError
from .net import Network, forward_standard
from .region import Region


@dataclass
class PlotGrid:
    bounds: tuple  # (x_min, x_max, y_min, y_max)
    resolution: int
    values: np.ndarray = None  # (resolution, resolution); row i is y_i, column j is x_j

    def __post_init__(self):
        x0, x1, y0, y1 = map(float, self.bounds)
        if not (x0 < x1 and y0 < y1):
            raise ValidationError(f"plot bounds must be ordered, got {self.bounds}")
        if self.resolution < 2:
            raise ValidationError("resolution must be >= 2")
        self.bounds = (x0, x1, y0, y1)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.bounds[0], self.bounds[1], self.resolution)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.bounds[2], self.bounds[3], self.resolution)


def thread_count() -> int:
    try:
        n = int(os.environ.get("POLICE_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def evaluate_grid(net: Network, bounds, resolution: int, output: int = 0, threads: int = None) -> PlotGrid:
    """Evaluate one output of a 2-D-input network on a regular grid (rows fan out over threads)."""
    if net.input_dim != 2:
        raise UnsupportedError(f"plots need a 2-D input network, got input dimension {net.input_dim}")
    grid = PlotGrid(bounds, resolution)
    xs, ys = grid.xs, grid.ys

    def row(y):
        pts = np.column_stack([xs, np.full_like(xs, y)])
        return forward_standard(net, pts)[:, output]

    threads = threads or thread_count()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(row, ys))
    else:
        rows = [row(y) for y in ys]
    grid.values = np.vstack(rows)
    return grid


def grid_csv(grid: PlotGrid) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "value"])
    for i, y in enumerate(grid.ys):
        for j, x in enumerate(grid.xs):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(grid.values[i, j]))])
    return buf.getvalue()


def to_pgm(grid: PlotGrid) -> bytes:
    """Binary 8-bit PGM, min-max normalised, top row = largest y."""
    v = grid.values
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        img = np.rint((v - lo) / (hi - lo) * 255.0)
    else:
        img = np.full(v.shape, 128.0)
    img = img[::-1].astype(np.uint8)
    header = f"P5\n# min {lo!r} max {hi!r}\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    return header + img.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    parts, pos = [], 0
    while len(parts) < 4:
        end = data.index(b"\n", pos)
        line = data[pos:end].split(b"#")[0]
        parts += line.split()
        pos = end + 1
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def zero_level_set(grid: PlotGrid) -> list[np.ndarray]:
    """Polylines (k x 2 arrays of x, y) where the grid crosses 0."""
    from skimage.measure import find_contours

    v = grid.values
    if v.min() > 0 or v.max() < 0:
        return []
    x0, x1, y0, y1 = grid.bounds
    n = grid.resolution - 1
    lines = []
    for c in find_contours(v, 0.0):
        # find_contours yields (row, col) in index space
        lines.append(np.column_stack([x0 + c[:, 1] / n * (x1 - x0), y0 + c[:, 0] / n * (y1 - y0)]))
    return lines


def polylines_csv(lines) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["polyline", "x", "y"])
    for k, line in enumerate(lines):
        for x, y in line:
            w.writerow([k, repr(float(x)), repr(float(y))])
    return buf.getvalue()


def region_outline(region: Region) -> np.ndarray:
    """2-D vertices ordered by angle around the centroid, closed."""
    if region.dim != 2:
        raise UnsupportedError("region outlines are only drawn in 2-D")
    v = region.vertices
    c = v.mean(axis=0)
    order = np.argsort(np.arctan2(v[:, 1] - c[1], v[:, 0] - c[0]), kind="stable")
    v = v[order]
    return np.vstack([v, v[:1]])


def write_plot(net: Network, out_prefix, bounds, resolution: int, classification: bool = False,
               region: Region = None) -> dict:
    """Write <prefix>.csv, <prefix>.pgm and, when applicable, boundary and region CSVs."""
    grid = evaluate_grid(net, bounds, resolution)
    prefix = Path(out_prefix)
    written = {}
    written["values"] = prefix.with_suffix(".csv")
    written["values"].write_text(grid_csv(grid))
    written["image"] = prefix.with_suffix(".pgm")
    written["image"].write_bytes(to_pgm(grid))
    if classification:
        written["boundary"] = prefix.with_name(prefix.name + "_boundary.csv")
        written["boundary"].write_text(polylines_csv(zero_level_set(grid)))
    if region is not None:
        written["region"] = prefix.with_name(prefix.name + "_region.csv")
        written["region"].write_text(polylines_csv([region_outline(region)]))
    return written
