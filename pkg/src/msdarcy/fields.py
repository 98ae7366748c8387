"""Permeability, source, and weight fields: ingestion, synthesis, validation.

Raster format: plain text, whitespace-separated, row-major with rows in
ascending y order.  Values round-trip bit-exactly through repr.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IncompatibleSourceError, RasterError

COMPAT_RTOL = 1e-12


@dataclass
class PermeabilityField:
    """Positive cellwise-constant permeability on a rows x cols raster grid."""

    values: np.ndarray  # (rows, cols)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("permeability raster must be two-dimensional")
        bad = np.argwhere(~(self.values > 0.0))
        if bad.size:
            r, c = bad[0]
            raise RasterError(
                f"nonpositive permeability {self.values[r, c]!r} at cell "
                f"(row={r}, col={c})")

    @property
    def kappa_min(self):
        return float(self.values.min())

    @property
    def kappa_max(self):
        return float(self.values.max())

    def on_mesh(self, mesh):
        """Cellwise values on the fine grid, flat in mesh cell order.

        Rasters whose shape differs from the fine grid are resampled to the
        nearest source cell.
        """
        vals = self.values
        if vals.shape != (mesh.nx, mesh.nx):
            vals = resample_nearest(vals, mesh.nx, mesh.nx)
        return vals.ravel().copy()


@dataclass
class SourceField:
    """Cellwise volumetric source density on the fine grid, compatibility-checked."""

    values: np.ndarray  # flat (num_cells,)
    cell_area: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        total = float(self.values.sum() * self.cell_area)
        scale = float(np.abs(self.values).sum() * self.cell_area)
        if scale > 0.0 and abs(total) > COMPAT_RTOL * scale:
            raise IncompatibleSourceError(
                f"source integral {total:.6e} is nonzero (boundary flux is zero); "
                f"compatibility requires |integral| <= {COMPAT_RTOL:g} * {scale:.6e}",
                integral=total)

    def integrals(self):
        """Per-cell source integrals (f, 1_c)."""
        return self.values * self.cell_area


def resample_nearest(values, nx, ny):
    """Nearest-cell resampling of a (rows, cols) raster onto an ny x nx grid."""
    rows, cols = values.shape
    ri = np.minimum((np.arange(ny) + 0.5) * rows / ny, rows - 1).astype(int)
    ci = np.minimum((np.arange(nx) + 0.5) * cols / nx, cols - 1).astype(int)
    return values[np.ix_(ri, ci)]


def load_raster(path, rows, cols):
    """Read a rows x cols permeability raster; reject nonpositive or malformed data."""
    tokens = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            for tok in line.split():
                try:
                    tokens.append(float(tok))
                except ValueError:
                    raise RasterError(f"unparseable value {tok!r}", path, lineno) from None
    if len(tokens) != rows * cols:
        raise RasterError(
            f"expected {rows * cols} values ({rows} x {cols}), found {len(tokens)}",
            path)
    try:
        return PermeabilityField(np.array(tokens).reshape(rows, cols))
    except RasterError as e:
        raise RasterError(str(e), path) from None


def save_raster(path, values):
    """Write a 2D array in the raster format; values round-trip bit-exactly."""
    values = np.asarray(values)
    with open(path, "w") as fh:
        for row in values:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")


def load_spe10_layer(path, layer, rows=220, cols=60):
    """One layer of a stacked SPE10-style raster file.

    The file holds whitespace-separated positive values, layer after layer,
    each layer rows x cols in the usual raster order.  The benchmark itself
    does not pin which layer an experiment uses, so the caller picks.
    """
    data = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            for tok in line.split():
                try:
                    data.append(float(tok))
                except ValueError:
                    raise RasterError(f"unparseable value {tok!r}", path, lineno) from None
    per_layer = rows * cols
    n_layers = len(data) // per_layer
    if n_layers * per_layer != len(data):
        raise RasterError(
            f"file holds {len(data)} values, not a multiple of {rows} x {cols}", path)
    if not (0 <= layer < n_layers):
        raise RasterError(f"layer {layer} out of range (file has {n_layers})", path)
    chunk = np.array(data[layer * per_layer:(layer + 1) * per_layer])
    return PermeabilityField(chunk.reshape(rows, cols))


def gen_field(kind, contrast, seed, shape):
    """Synthesize a two-valued high-contrast field: background 1, features = contrast.

    Deterministic for a fixed seed.  shape is (rows, cols) of the target grid.
    """
    if contrast < 1:
        raise ValueError(f"contrast must be >= 1, got {contrast}")
    rows, cols = shape
    vals = np.ones((rows, cols))
    rng = np.random.default_rng(seed)
    if kind == "uniform":
        pass
    elif kind == "inclusions":
        n_blobs = max(6, (rows * cols) // 600)
        for _ in range(n_blobs):
            w = rng.integers(max(2, cols // 16), max(3, cols // 6))
            hgt = rng.integers(max(2, rows // 16), max(3, rows // 6))
            r0 = rng.integers(0, rows - hgt + 1)
            c0 = rng.integers(0, cols - w + 1)
            vals[r0:r0 + hgt, c0:c0 + w] = contrast
    elif kind == "channels":
        n_h = max(3, rows // 16)
        for _ in range(n_h):
            r0 = int(rng.integers(0, rows - 1))
            t = int(rng.integers(1, 3))
            vals[r0:min(rows, r0 + t), :] = contrast
        n_v = max(2, cols // 24)
        for _ in range(n_v):
            c0 = int(rng.integers(0, cols - 1))
            t = int(rng.integers(1, 2 + 1))
            vals[:, c0:min(cols, c0 + t)] = contrast
    elif kind == "layered":
        r = 0
        high = False
        while r < rows:
            t = int(rng.integers(2, 9))
            if high:
                vals[r:min(rows, r + t), :] = contrast
            high = not high
            r += t
    else:
        raise ValueError(f"unknown field kind {kind!r}")
    return PermeabilityField(vals)


def box_source(boxes, mesh):
    """Source from (x0, y0, x1, y1, value) boxes by cell-center membership.

    Rectangles must lie inside the unit square; the compatibility condition
    is validated, never silently corrected.
    """
    centers = mesh.cell_centers
    vals = np.zeros(mesh.num_cells)
    for box in boxes:
        x0, y0, x1, y1, value = box
        if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
            raise ValueError(f"box {box!r} is not inside the unit square")
        inside = ((centers[:, 0] > x0) & (centers[:, 0] < x1)
                  & (centers[:, 1] > y0) & (centers[:, 1] < y1))
        vals[inside] += value
    return SourceField(vals, mesh.h ** 2)


def compute_kappa_tilde(kappa_cells, pou):
    """Weight field kappa * sum_j |grad chi_j|^2 at cell centers."""
    kt = np.asarray(kappa_cells, dtype=float) * pou.grad_sq_sum()
    if not np.all(kt > 0.0):
        # the folded interior family has gradient-free corner elements
        raise ValueError(
            "weight field vanishes on some cells; build it from 'all' or "
            "'interior_plain' hats")
    return kt
