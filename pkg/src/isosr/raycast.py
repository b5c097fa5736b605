"""Isosurface ray-casting: low-resolution G-buffers, ray-traced ambient
occlusion ground truth, and screen-space flow between camera poses.

Pixel conventions: pixel (0, 0) is the top-left, x grows right, y grows
down; pixel centers are at (x + 0.5, y + 0.5). Cameras follow the
OpenGL convention (right-handed view space, camera looking down -z,
clip z in [-1, 1]).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError
from .volume import MinMaxPyramid, ScalarVolume, gradient_central

DEPTH_EPS = 1e-3
DEFAULT_AO_SAMPLES = 128
MISS_NORMAL = (0.0, 0.0, 1.0)
# Primary rays sample a fixed 0.1-voxel grid so the pyramid-guided march
# visits an exact subset of an acceleration-free marcher's samples;
# occlusion rays trade accuracy for speed at 0.5 voxels.
FIRST_HIT_STEP_VOXELS = 0.1
AO_STEP_VOXELS = 0.5


@dataclass(frozen=True)
class Camera:
    """Rigid view + perspective projection + resolution."""

    view: np.ndarray
    proj: np.ndarray
    near: float
    far: float
    resolution: tuple[int, int]  # (W, H)

    def __post_init__(self):
        view = np.asarray(self.view, dtype=np.float64).reshape(4, 4)
        proj = np.asarray(self.proj, dtype=np.float64).reshape(4, 4)
        object.__setattr__(self, "view", view)
        object.__setattr__(self, "proj", proj)
        if not (0 < self.near < self.far):
            raise ConfigError(f"need 0 < near < far, got near={self.near} far={self.far}")
        r = view[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-4) or np.linalg.det(r) < 0.5:
            raise ConfigError("view matrix is not a rigid rotation+translation")

    @property
    def mvp(self) -> np.ndarray:
        return self.proj @ self.view

    @property
    def position(self) -> np.ndarray:
        r = self.view[:3, :3]
        return -r.T @ self.view[:3, 3]

    def with_resolution(self, w: int, h: int) -> "Camera":
        return Camera(self.view, self.proj, self.near, self.far, (int(w), int(h)))

    def hires(self, factor: int = 4) -> "Camera":
        w, h = self.resolution
        return self.with_resolution(w * factor, h * factor)

    @staticmethod
    def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right = right / np.linalg.norm(right)
        up2 = np.cross(right, fwd)
        view = np.eye(4)
        view[0, :3] = right
        view[1, :3] = up2
        view[2, :3] = -fwd
        view[:3, 3] = -view[:3, :3] @ eye
        return view

    @staticmethod
    def perspective(fov_y_deg: float, aspect: float, near: float, far: float) -> np.ndarray:
        f = 1.0 / np.tan(np.radians(fov_y_deg) / 2.0)
        proj = np.zeros((4, 4))
        proj[0, 0] = f / aspect
        proj[1, 1] = f
        proj[2, 2] = (far + near) / (near - far)
        proj[2, 3] = 2.0 * far * near / (near - far)
        proj[3, 2] = -1.0
        return proj

    @staticmethod
    def framing(volume: ScalarVolume, eye, resolution, fov_y_deg: float = 45.0,
                up=(0.0, 0.0, 1.0)) -> "Camera":
        """Camera at ``eye`` looking at the volume center, near/far set
        from the distance and volume diagonal."""
        eye = np.asarray(eye, dtype=np.float64)
        center = volume.world_center
        dist = float(np.linalg.norm(center - eye))
        half_diag = volume.diagonal / 2.0
        near = max(dist - half_diag * 1.5, dist * 0.05)
        far = dist + half_diag * 1.5
        w, h = resolution
        view = Camera.look_at(eye, center, up)
        proj = Camera.perspective(fov_y_deg, w / h, near, far)
        return Camera(view, proj, near, far, (int(w), int(h)))


@dataclass
class GBuffer:
    """Low-resolution geometry maps: hit mask in {-1,+1}, screen-space
    unit normals (miss default (0,0,1)), depth in [0,1] with 0 = miss."""

    mask: np.ndarray    # (H, W)
    normal: np.ndarray  # (3, H, W)
    depth: np.ndarray   # (H, W)

    @property
    def resolution(self) -> tuple[int, int]:
        h, w = self.mask.shape
        return (w, h)

    def channels(self) -> np.ndarray:
        """Stack as (5, H, W): mask, nx, ny, nz, depth."""
        return np.concatenate([self.mask[None], self.normal, self.depth[None]], axis=0)

    @staticmethod
    def from_channels(arr: np.ndarray) -> "GBuffer":
        if arr.ndim != 3 or arr.shape[0] != 5:
            raise ConfigError(f"expected (5, H, W) array, got {arr.shape}")
        return GBuffer(mask=arr[0].copy(), normal=arr[1:4].copy(), depth=arr[4].copy())


@dataclass
class FlowField:
    """Screen-space displacement in low-res pixel units; valid marks
    pixels where the surface was hit this frame."""

    flow: np.ndarray   # (2, H, W): dx, dy
    valid: np.ndarray  # (H, W) bool

    @property
    def resolution(self) -> tuple[int, int]:
        h, w = self.valid.shape
        return (w, h)


@dataclass
class HiResFields:
    """High-resolution maps: GBuffer channels plus ambient occlusion in
    [0, 1] (1 = unoccluded; misses are filled with 1)."""

    mask: np.ndarray
    normal: np.ndarray
    depth: np.ndarray
    ao: np.ndarray

    @property
    def resolution(self) -> tuple[int, int]:
        h, w = self.mask.shape
        return (w, h)

    def channels(self) -> np.ndarray:
        """Stack as (6, H, W): mask, nx, ny, nz, depth, ao."""
        return np.concatenate(
            [self.mask[None], self.normal, self.depth[None], self.ao[None]], axis=0)

    @staticmethod
    def from_channels(arr: np.ndarray) -> "HiResFields":
        if arr.ndim != 3 or arr.shape[0] != 6:
            raise ConfigError(f"expected (6, H, W) array, got {arr.shape}")
        return HiResFields(mask=arr[0].copy(), normal=arr[1:4].copy(),
                           depth=arr[4].copy(), ao=arr[5].copy())


@dataclass
class Hits:
    """Per-pixel first-hit result of one rendered frame."""

    t: np.ndarray        # (H, W) world-space hit distance, 0 where miss
    points: np.ndarray   # (H, W, 3) world-space hit positions
    hit: np.ndarray      # (H, W) bool


def pack_pyramid(pyr: MinMaxPyramid):
    """Flatten pyramid levels into the arrays the kernels consume."""
    mins = np.concatenate([m.ravel() for m in pyr.mins]).astype(np.float32)
    maxs = np.concatenate([m.ravel() for m in pyr.maxs]).astype(np.float32)
    offs = np.zeros(pyr.n_levels + 1, dtype=np.int64)
    ldims = np.zeros((pyr.n_levels, 3), dtype=np.int64)
    for i in range(pyr.n_levels):
        offs[i + 1] = offs[i] + pyr.mins[i].size
        nx, ny, nz = pyr.level_dims(i)
        ldims[i] = (nx, ny, nz)
    return mins, maxs, offs, ldims


class _PackedScene:
    """Volume + packed pyramid arrays, cached per (volume, pyramid) pair.

    Data and bounds are widened to float64 once; the kernels then run
    without per-sample conversions.
    """

    def __init__(self, vol: ScalarVolume, pyr: MinMaxPyramid):
        self.vol = vol
        self.data = np.ascontiguousarray(vol.data, dtype=np.float64)
        self.spacing = np.array(vol.spacing, dtype=np.float64)
        mins, maxs, self.offs, self.ldims = pack_pyramid(pyr)
        self.mins = mins.astype(np.float64)
        self.maxs = maxs.astype(np.float64)
        self.n_levels = pyr.n_levels


_scene_cache: dict[tuple[int, int], _PackedScene] = {}


def _scene(vol: ScalarVolume, pyr: MinMaxPyramid) -> _PackedScene:
    key = (id(vol), id(pyr))
    sc = _scene_cache.get(key)
    if sc is None or sc.vol is not vol:
        sc = _PackedScene(vol, pyr)
        if len(_scene_cache) > 16:
            _scene_cache.clear()
        _scene_cache[key] = sc
    return sc


def first_hit_batch(vol: ScalarVolume, pyr: MinMaxPyramid, origins, dirs,
                    iso: float, near: float = 0.0, far: float = np.inf):
    """Pyramid-accelerated first hit for N rays.

    Returns (t, hit): world-space hit distances and a boolean hit mask.
    """
    sc = _scene(vol, pyr)
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = origins.shape[0]
    out_t = np.zeros(n, dtype=np.float64)
    out_hit = np.zeros(n, dtype=np.uint8)
    _kernels.first_hit_batch(sc.data, sc.mins, sc.maxs, sc.offs, sc.ldims,
                             sc.n_levels, origins, dirs, sc.spacing,
                             float(iso), float(near), float(far),
                             FIRST_HIT_STEP_VOXELS, out_t, out_hit)
    return out_t, out_hit.astype(bool)


def first_hit(vol: ScalarVolume, pyr: MinMaxPyramid, origin, direction,
              iso: float, near: float = 0.0, far: float = np.inf):
    """Single-ray first hit. Returns (t_hit, p_hit) or None on miss."""
    t, hit = first_hit_batch(vol, pyr, np.asarray(origin)[None],
                             np.asarray(direction)[None], iso, near, far)
    if not hit[0]:
        return None
    t0 = float(t[0])
    return t0, np.asarray(origin, dtype=np.float64) + t0 * np.asarray(direction, dtype=np.float64)


def first_hit_skipped_segments(vol: ScalarVolume, pyr: MinMaxPyramid, origin,
                               direction, iso: float, near: float = 0.0,
                               far: float = np.inf, max_segments: int = 4096):
    """Single-ray march that also reports the t-intervals skipped via the
    pyramid. Returns (hit, t, segments (n, 2))."""
    sc = _scene(vol, pyr)
    seg = np.zeros((max_segments, 2), dtype=np.float64)
    hit, t, nseg = _kernels.first_hit_segments(
        sc.data, sc.mins, sc.maxs, sc.offs, sc.ldims, sc.n_levels,
        np.asarray(origin, dtype=np.float64), np.asarray(direction, dtype=np.float64),
        sc.spacing, float(iso), float(near), float(far),
        FIRST_HIT_STEP_VOXELS, seg)
    return bool(hit), float(t), seg[:nseg].copy()


def brute_force_first_hit_batch(vol: ScalarVolume, origins, dirs, iso: float,
                                near: float = 0.0, far: float = np.inf,
                                step_voxels: float = FIRST_HIT_STEP_VOXELS):
    """Acceleration-free fixed-step reference marcher (slow path).

    Uses no pyramid; samples every ``step_voxels`` along each ray on the
    same sample grid as the accelerated marcher. Returns (t, hit).
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    data = np.ascontiguousarray(vol.data, dtype=np.float64)
    spacing = np.array(vol.spacing, dtype=np.float64)
    n = origins.shape[0]
    out_t = np.zeros(n, dtype=np.float64)
    out_hit = np.zeros(n, dtype=np.uint8)
    _kernels.brute_force_hit_batch(data, origins, dirs, spacing, float(iso),
                                   float(near), float(far), float(step_voxels),
                                   out_t, out_hit)
    return out_t, out_hit.astype(bool)


def camera_rays(cam: Camera):
    """Per-pixel world-space rays. Returns (origins (N,3), dirs (N,3)) in
    row-major pixel order."""
    w, h = cam.resolution
    xs = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    ys = 1.0 - (np.arange(h) + 0.5) / h * 2.0
    u, v = np.meshgrid(xs, ys)
    ndc = np.stack([u.ravel(), v.ravel()], axis=1)
    inv = np.linalg.inv(cam.mvp)

    def unproject(z):
        clip = np.concatenate([ndc, np.full((ndc.shape[0], 1), z), np.ones((ndc.shape[0], 1))], axis=1)
        p = clip @ inv.T
        return p[:, :3] / p[:, 3:4]

    p_near = unproject(-1.0)
    p_far = unproject(1.0)
    dirs = p_far - p_near
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.position, dirs.shape).copy()
    return origins, dirs


def render_hits(vol: ScalarVolume, pyr: MinMaxPyramid, cam: Camera, iso: float) -> Hits:
    """First-hit pass over all pixels of the camera."""
    w, h = cam.resolution
    origins, dirs = camera_rays(cam)
    t, hit = first_hit_batch(vol, pyr, origins, dirs, iso, cam.near, cam.far)
    pts = origins + t[:, None] * dirs
    pts[~hit] = 0.0
    t = np.where(hit, t, 0.0)
    return Hits(t=t.reshape(h, w), points=pts.reshape(h, w, 3), hit=hit.reshape(h, w))


def _screen_normals(vol: ScalarVolume, cam: Camera, hits: Hits) -> np.ndarray:
    """Screen-space unit normals at the hit points, flipped toward the
    viewer; (3, H, W) with the miss default (0, 0, 1)."""
    h, w = hits.hit.shape
    normal = np.zeros((3, h, w), dtype=np.float64)
    normal[2] = 1.0
    idx = np.argwhere(hits.hit)
    if idx.size:
        pts = hits.points[idx[:, 0], idx[:, 1]]
        g = gradient_central(vol, pts)
        r = cam.view[:3, :3]
        n = g @ r.T
        norms = np.linalg.norm(n, axis=1, keepdims=True)
        degenerate = norms[:, 0] < 1e-8
        norms[degenerate[:, None]] = 1.0
        n = n / norms
        n[degenerate] = (0.0, 0.0, 1.0)  # flat-gradient hits face the viewer
        n[n[:, 2] < 0.0] *= -1.0
        normal[:, idx[:, 0], idx[:, 1]] = n.T
    return normal


def render_gbuffer(vol: ScalarVolume, pyr: MinMaxPyramid, cam: Camera,
                   iso: float, hits: Hits | None = None) -> GBuffer:
    """Render mask/normal/depth maps at the camera's resolution.

    depth = eps + (1 - eps) * (t - near) / (far - near) for hits so that
    0 unambiguously means "no hit"; misses get mask -1, normal (0,0,1).
    """
    if hits is None:
        hits = render_hits(vol, pyr, cam, iso)
    mask = np.where(hits.hit, 1.0, -1.0).astype(np.float32)
    depth = np.where(
        hits.hit,
        DEPTH_EPS + (1.0 - DEPTH_EPS) * (hits.t - cam.near) / (cam.far - cam.near),
        0.0,
    ).astype(np.float32)
    normal = _screen_normals(vol, cam, hits).astype(np.float32)
    return GBuffer(mask=mask, normal=normal, depth=depth)


def screen_space_flow(hits: Hits, cam_t: Camera, cam_tm1: Camera) -> FlowField:
    """Displacement of each hit point's projection between the previous
    and current camera, in this frame's pixel units (current - previous).
    Hit points behind the previous camera are marked invalid."""
    w, h = cam_t.resolution
    flow = np.zeros((2, h, w), dtype=np.float32)
    valid = hits.hit.copy()
    idx = np.argwhere(hits.hit)
    if idx.size:
        pts = hits.points[idx[:, 0], idx[:, 1]]
        ones = np.ones((pts.shape[0], 1))
        ph = np.concatenate([pts, ones], axis=1)

        def project(cam):
            clip = ph @ cam.mvp.T
            wclip = clip[:, 3]
            ok = wclip > 1e-9
            ndc = clip[:, :2] / np.where(ok, wclip, 1.0)[:, None]
            px = (ndc[:, 0] + 1.0) / 2.0 * w - 0.5
            py = (1.0 - ndc[:, 1]) / 2.0 * h - 0.5
            return np.stack([px, py], axis=1), ok

        cur, ok_cur = project(cam_t)
        prev, ok_prev = project(cam_tm1)
        ok = ok_cur & ok_prev
        f = np.where(ok[:, None], cur - prev, 0.0)
        flow[:, idx[:, 0], idx[:, 1]] = f.T
        valid[idx[:, 0], idx[:, 1]] = ok
    return FlowField(flow=flow, valid=valid)


def ambient_occlusion_batch(vol: ScalarVolume, pyr: MinMaxPyramid, points,
                            normals, iso: float, n_samples: int,
                            max_dist: float, seed: int) -> np.ndarray:
    """Fraction of unoccluded hemisphere directions per surface point.

    Cosine-weighted sampling; ray origins are lifted 2 voxels along the
    normal to avoid self-intersection. Deterministic per seed.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    sc = _scene(vol, pyr)
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    normals = np.ascontiguousarray(normals, dtype=np.float64).reshape(-1, 3)
    out = np.zeros(points.shape[0], dtype=np.int64)
    offset = 2.0 * float(np.mean(vol.spacing))
    _kernels.ambient_occlusion_batch(sc.data, sc.mins, sc.maxs, sc.offs,
                                     sc.ldims, sc.n_levels, points, normals,
                                     sc.spacing, float(iso), int(n_samples),
                                     float(max_dist), int(seed) & 0xFFFFFFFFFFFFFFFF,
                                     offset, AO_STEP_VOXELS, out)
    return out.astype(np.float64) / float(n_samples)


def ambient_occlusion(vol: ScalarVolume, pyr: MinMaxPyramid, p_hit, n_world,
                      n_samples: int, max_dist: float, seed: int,
                      iso: float | None = None) -> float:
    """Single-point ambient occlusion in [0, 1]; 1 = fully open.

    ``iso`` defaults to the volume's default iso-value.
    """
    if iso is None:
        iso = vol.default_iso
    ao = ambient_occlusion_batch(vol, pyr, np.asarray(p_hit)[None],
                                 np.asarray(n_world)[None], iso,
                                 n_samples, max_dist, seed)
    return float(ao[0])


def render_ground_truth(vol: ScalarVolume, pyr: MinMaxPyramid, cam_hr: Camera,
                        iso: float, ao_samples: int = DEFAULT_AO_SAMPLES,
                        seed: int = 0, max_dist: float | None = None) -> HiResFields:
    """High-resolution G-buffer plus ray-traced ambient occlusion.

    ``max_dist`` defaults to 10% of the volume diagonal. Misses get
    ao = 1. Deterministic for fixed scene and seed.
    """
    hits = render_hits(vol, pyr, cam_hr, iso)
    gb = render_gbuffer(vol, pyr, cam_hr, iso, hits=hits)
    h, w = hits.hit.shape
    ao = np.ones((h, w), dtype=np.float32)
    idx = np.argwhere(hits.hit)
    if idx.size:
        pts = hits.points[idx[:, 0], idx[:, 1]]
        g = gradient_central(vol, pts)
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        r = cam_hr.view[:3, :3]
        degenerate = norms[:, 0] < 1e-8
        norms[degenerate[:, None]] = 1.0
        n_world = g / norms
        n_world[degenerate] = r[2]  # flat-gradient hits face the viewer
        # orient along the screen-space normal used in the G-buffer
        flip = (n_world @ r.T)[:, 2] < 0.0
        n_world[flip] *= -1.0
        if max_dist is None:
            max_dist = 0.1 * vol.diagonal
        vals = ambient_occlusion_batch(vol, pyr, pts, n_world, iso,
                                       ao_samples, max_dist, seed)
        ao[idx[:, 0], idx[:, 1]] = vals.astype(np.float32)
    return HiResFields(mask=gb.mask, normal=gb.normal, depth=gb.depth, ao=ao)
