"""Scalar fields on regular grids: sampling, gradients, min-max pyramids,
and procedural test volumes.

Conventions: voxel centers sit at integer coordinates in "voxel space";
world position = voxel coordinate * spacing. Volume data is stored as a
(nz, ny, nx) array so the flat layout is x-fastest. Sampling outside the
grid clamps to the border (never a fault).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

PROCEDURAL_KINDS = ("sphere", "metaballs", "fractal-noise", "csg")


@dataclass
class ScalarVolume:
    """Dense scalar field on a regular grid.

    dims is (nx, ny, nz) in voxels, spacing is world units per voxel,
    data has shape (nz, ny, nx). Immutable after construction.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    data: np.ndarray
    default_iso: float = 0.5

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        if any(d < 1 for d in self.dims):
            raise ConfigError(f"dims must be positive, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise ConfigError(f"spacing must be positive, got {self.spacing}")
        expected = (self.dims[2], self.dims[1], self.dims[0])
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.shape != expected:
            if data.size == np.prod(expected):
                data = data.reshape(expected)
            else:
                raise ConfigError(f"data shape {data.shape} does not match dims {self.dims}")
        if not np.all(np.isfinite(data)):
            raise ConfigError("volume contains non-finite samples")
        self.data = data
        self.data.flags.writeable = False

    @property
    def world_size(self) -> np.ndarray:
        """Extent of the sampled domain: (dims - 1) * spacing per axis."""
        return (np.array(self.dims, dtype=np.float64) - 1.0) * np.array(self.spacing)

    @property
    def world_center(self) -> np.ndarray:
        return self.world_size / 2.0

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.world_size))

    def value_range(self) -> tuple[float, float]:
        return float(self.data.min()), float(self.data.max())


def sample_trilinear(vol: ScalarVolume, p) -> np.ndarray | float:
    """Trilinearly interpolate the field at world point(s) ``p``.

    ``p`` is a 3-vector or an (..., 3) array. Out-of-bounds points clamp
    to the border. Exact at voxel centers.
    """
    p = np.asarray(p, dtype=np.float64)
    scalar_in = p.ndim == 1
    q = np.atleast_2d(p) / np.array(vol.spacing)
    nx, ny, nz = vol.dims
    hi = np.array([nx - 1, ny - 1, nz - 1], dtype=np.float64)
    q = np.clip(q, 0.0, hi)
    i0 = np.minimum(np.floor(q).astype(np.int64), np.maximum(hi.astype(np.int64) - 1, 0))
    f = q - i0
    i1 = np.minimum(i0 + 1, hi.astype(np.int64))

    d = vol.data
    x0, y0, z0 = i0[..., 0], i0[..., 1], i0[..., 2]
    x1, y1, z1 = i1[..., 0], i1[..., 1], i1[..., 2]
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]

    c00 = d[z0, y0, x0] * (1 - fx) + d[z0, y0, x1] * fx
    c10 = d[z0, y1, x0] * (1 - fx) + d[z0, y1, x1] * fx
    c01 = d[z1, y0, x0] * (1 - fx) + d[z1, y0, x1] * fx
    c11 = d[z1, y1, x0] * (1 - fx) + d[z1, y1, x1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    out = c0 * (1 - fz) + c1 * fz
    out = out.reshape(p.shape[:-1]) if not scalar_in else out
    return float(out[0]) if scalar_in else out


def gradient_central(vol: ScalarVolume, p) -> np.ndarray:
    """Central-difference gradient of the trilinear field at world point(s).

    Step is one voxel spacing per axis; border clamping applies to the
    probe samples like any other sample.
    """
    p = np.asarray(p, dtype=np.float64)
    scalar_in = p.ndim == 1
    pts = np.atleast_2d(p)
    g = np.empty_like(pts)
    for a in range(3):
        h = vol.spacing[a]
        dp = np.zeros(3)
        dp[a] = h
        g[:, a] = (sample_trilinear(vol, pts + dp) - sample_trilinear(vol, pts - dp)) / (2.0 * h)
    return g[0] if scalar_in else g.reshape(p.shape)


@dataclass
class MinMaxPyramid:
    """Per-region (min, max) bounds over the trilinear field.

    Level 0 nodes span 2 voxels per axis and take their bounds over a
    3-voxel window (one voxel of overlap) so the trilinear reconstruction
    inside the node's spatial region is fully bounded. Each coarser level
    merges 2x2x2 children. Node (level, i, j, k) covers voxel-space
    region [idx * 2**(level+1), (idx+1) * 2**(level+1)] per axis.
    """

    mins: list[np.ndarray] = field(default_factory=list)
    maxs: list[np.ndarray] = field(default_factory=list)

    @property
    def n_levels(self) -> int:
        return len(self.mins)

    def level_dims(self, level: int) -> tuple[int, int, int]:
        nz, ny, nx = self.mins[level].shape
        return (nx, ny, nz)

    def node_range(self, level: int, idx) -> tuple[float, float]:
        ix, iy, iz = idx
        return float(self.mins[level][iz, iy, ix]), float(self.maxs[level][iz, iy, ix])

    def node_region(self, level: int, idx) -> tuple[np.ndarray, np.ndarray]:
        """Voxel-space (lo, hi) corner of the node's spatial region."""
        size = 2 << level
        lo = np.array(idx, dtype=np.int64) * size
        return lo, lo + size


def _pool_minmax(lo: np.ndarray, hi: np.ndarray, window: int, stride: int):
    """Min/max pool 3D arrays with edge replication to cover partial windows."""
    nz, ny, nx = lo.shape
    nbz = max(1, -(-(nz - 1) // stride)) if window == 3 else max(1, -(-nz // stride))
    nby = max(1, -(-(ny - 1) // stride)) if window == 3 else max(1, -(-ny // stride))
    nbx = max(1, -(-(nx - 1) // stride)) if window == 3 else max(1, -(-nx // stride))
    need = (stride * (nbz - 1) + window, stride * (nby - 1) + window,
            stride * (nbx - 1) + window)
    pad = [(0, max(0, need[i] - lo.shape[i])) for i in range(3)]
    lo_p = np.pad(lo, pad, mode="edge")
    hi_p = np.pad(hi, pad, mode="edge")
    out_lo = np.full((nbz, nby, nbx), np.inf, dtype=lo.dtype)
    out_hi = np.full((nbz, nby, nbx), -np.inf, dtype=hi.dtype)
    for dz in range(window):
        for dy in range(window):
            for dx in range(window):
                sl = lo_p[dz:dz + stride * nbz:stride,
                          dy:dy + stride * nby:stride,
                          dx:dx + stride * nbx:stride]
                sh = hi_p[dz:dz + stride * nbz:stride,
                          dy:dy + stride * nby:stride,
                          dx:dx + stride * nbx:stride]
                np.minimum(out_lo, sl, out=out_lo)
                np.maximum(out_hi, sh, out=out_hi)
    return out_lo, out_hi


def build_pyramid(vol: ScalarVolume) -> MinMaxPyramid:
    """Build the min-max pyramid for empty-space skipping.

    Requires at least 2 voxels per axis. The top level is a single node.
    """
    if any(d < 2 for d in vol.dims):
        raise ConfigError(f"pyramid requires dims >= 2 per axis, got {vol.dims}")
    pyr = MinMaxPyramid()
    lo, hi = _pool_minmax(vol.data, vol.data, window=3, stride=2)
    pyr.mins.append(lo)
    pyr.maxs.append(hi)
    while lo.shape != (1, 1, 1):
        lo, hi = _pool_minmax(lo, hi, window=2, stride=2)
        pyr.mins.append(lo)
        pyr.maxs.append(hi)
    return pyr


def interval_excludes(pyr: MinMaxPyramid, node, iso: float) -> bool:
    """True iff ``iso`` lies outside the node's [min, max] interval.

    ``node`` is (level, (ix, iy, iz)). A True result guarantees the
    trilinear field never crosses ``iso`` inside the node's region.
    """
    level, idx = node
    lo, hi = pyr.node_range(level, idx)
    return iso < lo or iso > hi


def _grid_points(dims, spacing):
    nx, ny, nz = dims
    z, y, x = np.meshgrid(
        np.arange(nz) * spacing[2],
        np.arange(ny) * spacing[1],
        np.arange(nx) * spacing[0],
        indexing="ij",
    )
    return x, y, z


def _normalize01(f: np.ndarray) -> np.ndarray:
    lo, hi = f.min(), f.max()
    if hi - lo < 1e-12:
        return np.full_like(f, 0.5)
    return (f - lo) / (hi - lo)


def _gen_sphere(dims, spacing, rng):
    x, y, z = _grid_points(dims, spacing)
    extent = min((d - 1) * s for d, s in zip(dims, spacing))
    c = [(d - 1) * s / 2.0 for d, s in zip(dims, spacing)]
    r = 0.3 * extent
    dist = np.sqrt((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2)
    return 0.5 + 0.5 * np.clip((r - dist) / r, -1.0, 1.0)


def _gen_metaballs(dims, spacing, rng):
    x, y, z = _grid_points(dims, spacing)
    size = np.array([(d - 1) * s for d, s in zip(dims, spacing)])
    n_balls = int(rng.integers(4, 8))
    f = np.zeros_like(x)
    for _ in range(n_balls):
        c = size * (0.25 + 0.5 * rng.random(3))
        sigma = float(size.min()) * (0.08 + 0.10 * rng.random())
        d2 = (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2
        f += np.exp(-d2 / (2.0 * sigma * sigma))
    return _normalize01(f)


def _resample_trilinear_grid(grid: np.ndarray, out_dims) -> np.ndarray:
    """Trilinearly resample a (gz, gy, gx) lattice onto an output grid."""
    nx, ny, nz = out_dims
    gz, gy, gx = grid.shape
    qx = np.linspace(0.0, gx - 1.0, nx)
    qy = np.linspace(0.0, gy - 1.0, ny)
    qz = np.linspace(0.0, gz - 1.0, nz)

    def split(q, n):
        i0 = np.minimum(q.astype(np.int64), max(n - 2, 0))
        return i0, np.minimum(i0 + 1, n - 1), q - i0

    x0, x1, fx = split(qx, gx)
    y0, y1, fy = split(qy, gy)
    z0, z1, fz = split(qz, gz)
    fx = fx[None, None, :]
    fy = fy[None, :, None]
    fz = fz[:, None, None]

    def g(zi, yi, xi):
        return grid[zi[:, None, None], yi[None, :, None], xi[None, None, :]]

    c00 = g(z0, y0, x0) * (1 - fx) + g(z0, y0, x1) * fx
    c10 = g(z0, y1, x0) * (1 - fx) + g(z0, y1, x1) * fx
    c01 = g(z1, y0, x0) * (1 - fx) + g(z1, y0, x1) * fx
    c11 = g(z1, y1, x0) * (1 - fx) + g(z1, y1, x1) * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


def _gen_fractal_noise(dims, spacing, rng):
    # Band-limited value noise: coarsest lattice ~8 voxels per cell, three
    # octaves halving wavelength and amplitude. Keeps features wide enough
    # for 0.5-voxel ray stepping.
    f = np.zeros((dims[2], dims[1], dims[0]))
    amplitude = 1.0
    cells = max(2, min(dims) // 8)
    for _ in range(3):
        lattice = rng.random((cells + 1, cells + 1, cells + 1))
        f += amplitude * _resample_trilinear_grid(lattice, dims)
        amplitude *= 0.5
        cells *= 2
    return _normalize01(f)


def _gen_csg(dims, spacing, rng):
    # Smooth union of a box and spheres with one subtracted sphere,
    # expressed as a signed "insideness" field mapped to [0, 1].
    x, y, z = _grid_points(dims, spacing)
    size = np.array([(d - 1) * s for d, s in zip(dims, spacing)])
    c = size / 2.0
    half = size * (0.18 + 0.08 * rng.random(3))
    box = np.minimum.reduce([
        half[0] - np.abs(x - c[0]),
        half[1] - np.abs(y - c[1]),
        half[2] - np.abs(z - c[2]),
    ])
    f = box
    for _ in range(int(rng.integers(1, 3))):
        bc = size * (0.3 + 0.4 * rng.random(3))
        r = float(size.min()) * (0.12 + 0.10 * rng.random())
        sph = r - np.sqrt((x - bc[0]) ** 2 + (y - bc[1]) ** 2 + (z - bc[2]) ** 2)
        f = np.maximum(f, sph)
    hc = c + size * (0.2 * rng.random(3) - 0.1)
    hr = float(size.min()) * (0.10 + 0.06 * rng.random())
    hole = hr - np.sqrt((x - hc[0]) ** 2 + (y - hc[1]) ** 2 + (z - hc[2]) ** 2)
    f = np.minimum(f, -hole)
    w = 0.15 * float(size.min())
    return 0.5 + 0.5 * np.clip(f / w, -1.0, 1.0)


_GENERATORS = {
    "sphere": _gen_sphere,
    "metaballs": _gen_metaballs,
    "fractal-noise": _gen_fractal_noise,
    "csg": _gen_csg,
}


def gen_procedural(kind: str, dims, seed: int, spacing=(1.0, 1.0, 1.0)) -> ScalarVolume:
    """Generate a deterministic procedural volume.

    ``kind`` is one of sphere, metaballs, fractal-noise, csg. Values are
    normalized to [0, 1] and default_iso is 0.5. The same (kind, dims,
    seed) always produces bit-identical data.
    """
    if isinstance(dims, int):
        dims = (dims, dims, dims)
    dims = tuple(int(d) for d in dims)
    if any(d < 8 for d in dims):
        raise ConfigError(f"procedural volumes need dims >= 8, got {dims}")
    if kind not in _GENERATORS:
        raise ConfigError(f"unknown procedural kind {kind!r}; expected one of {PROCEDURAL_KINDS}")
    rng = np.random.default_rng([int(seed), PROCEDURAL_KINDS.index(kind)])
    f = _GENERATORS[kind](dims, spacing, rng)
    return ScalarVolume(dims=dims, spacing=spacing, data=f.astype(np.float32), default_iso=0.5)
