"""Differentiable screen-space Phong shading with ambient-occlusion
modulation and mask-based background compositing.

Operates on the 6-channel high-resolution maps (mask, normal, depth,
ao) as autodiff tensors so color-space losses can push gradients back
into the geometry channels. Normals are in screen space, the viewer
direction is the fixed (0, 0, 1).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

NORMALIZE_EPS = 1e-8
VIEW_DIR = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class ShadingParams:
    """Phong coefficients (RGB triples in [0, 1]), a unit light
    direction in screen space, the specular exponent, and the
    background color."""

    c_ambient: tuple = (0.1, 0.1, 0.1)
    c_diffuse: tuple = (0.8, 0.8, 0.8)
    c_specular: tuple = (0.3, 0.3, 0.3)
    c_material: tuple = (0.9, 0.6, 0.2)
    light_dir: tuple = (0.0, 0.0, 1.0)
    shininess: float = 16.0
    c_background: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        l = np.asarray(self.light_dir, dtype=np.float64)
        n = np.linalg.norm(l)
        if abs(n - 1.0) > 1e-3:
            raise ConfigError(f"light_dir must be unit length, |l| = {n:.4f}")
        if self.shininess <= 0:
            raise ConfigError("shininess must be positive")

    def to_dict(self) -> dict:
        return {
            "c_ambient": list(self.c_ambient),
            "c_diffuse": list(self.c_diffuse),
            "c_specular": list(self.c_specular),
            "c_material": list(self.c_material),
            "light_dir": list(self.light_dir),
            "shininess": self.shininess,
            "c_background": list(self.c_background),
        }

    @staticmethod
    def from_dict(d: dict) -> "ShadingParams":
        kwargs = {k: tuple(v) if isinstance(v, (list, tuple)) else float(v)
                  for k, v in d.items()}
        return ShadingParams(**kwargs)


def _rgb(values, dtype) -> np.ndarray:
    return np.asarray(values, dtype=dtype).reshape(1, 3, 1, 1)


def shade(o: Tensor, params: ShadingParams) -> Tensor:
    """Shade 6-channel maps (B, 6, H, W) into color (B, 3, H, W).

    Phong term: (c_a*c_m + c_d*c_m*max(0, n.l) + c_s*max(0, r.v)^shininess)
    scaled by AO; the mask, clamped to [-1, 1] and rescaled to [0, 1],
    alpha-blends against the background color. Output clamped to [0, 1].
    Differentiable w.r.t. normal, AO, and mask.
    """
    dtype = o.data.dtype
    mask = o[:, 0:1]
    normal = o[:, 1:4]
    ao = o[:, 5:6]

    # renormalize: network outputs are not unit length
    nlen = ad.sqrt(ad.add(ad.tsum(ad.mul(normal, normal), axis=1, keepdims=True),
                          NORMALIZE_EPS))
    n = ad.div(normal, nlen)

    l = _rgb(params.light_dir, dtype)
    ndotl_signed = ad.tsum(ad.mul(n, ad.tensor(l)), axis=1, keepdims=True)
    ndotl = ad.relu(ndotl_signed)

    # r = reflect(-l, n) = 2 (n.l) n - l; viewer is (0, 0, 1), so r.v = r_z
    r = ad.sub(ad.mul(ad.mul(n, ndotl_signed), 2.0), ad.tensor(l))
    rdotv = ad.relu(r[:, 2:3])
    specular = ad.power(rdotv, params.shininess)

    ca = np.asarray(params.c_ambient, dtype=dtype)
    cd = np.asarray(params.c_diffuse, dtype=dtype)
    cs = np.asarray(params.c_specular, dtype=dtype)
    cm = np.asarray(params.c_material, dtype=dtype)
    ambient = _rgb(ca * cm, dtype)
    rgb = ad.add(
        ad.add(ad.tensor(ambient), ad.mul(ndotl, ad.tensor(_rgb(cd * cm, dtype)))),
        ad.mul(specular, ad.tensor(_rgb(cs, dtype))),
    )
    rgb = ad.mul(rgb, ao)

    m01 = ad.mul(ad.add(ad.clamp(mask, -1.0, 1.0), 1.0), 0.5)
    color = ad.lerp(ad.tensor(_rgb(params.c_background, dtype)), rgb, m01)
    return ad.clamp(color, 0.0, 1.0)


def shade_arrays(channels: np.ndarray, params: ShadingParams) -> np.ndarray:
    """Shade plain (6, H, W) arrays to a (3, H, W) color image."""
    with ad.no_grad():
        out = shade(ad.tensor(channels[None]), params)
    return out.data[0]


def write_png(path: str | os.PathLike, color: np.ndarray) -> None:
    """Write a (3, H, W) color image in [0, 1] as an 8-bit PNG."""
    from PIL import Image

    arr = np.clip(np.asarray(color), 0.0, 1.0)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ConfigError(f"expected (3, H, W) image, got {arr.shape}")
    img = (arr * 255.0).round().astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(img, mode="RGB").save(path)


def rgb8(color: np.ndarray) -> np.ndarray:
    """Quantize a (3, H, W) [0, 1] image to (H, W, 3) uint8."""
    arr = np.clip(np.asarray(color), 0.0, 1.0)
    return (arr * 255.0).round().astype(np.uint8).transpose(1, 2, 0)
