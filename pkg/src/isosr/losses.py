"""Masked spatial, temporal, and perceptual losses plus their weighted sum.

Losses that do not act on the mask itself are modulated per pixel with
the ground-truth hit mask, so values the renderer filled with defaults
in background regions never contribute (bit-exact invariance). The
reduction is the mean over batch, channels, and mask-weighted pixels,
which keeps the weight presets resolution-independent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

_WEIGHT_FIELDS = ("mask_l1", "ao_l1", "normal_l1", "normal_perceptual",
                  "color_perceptual", "ao_temporal", "normal_temporal",
                  "color_temporal")


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights for the total training objective."""

    mask_l1: float = 0.0
    ao_l1: float = 0.0
    normal_l1: float = 0.0
    normal_perceptual: float = 0.0
    color_perceptual: float = 0.0
    ao_temporal: float = 0.0
    normal_temporal: float = 0.0
    color_temporal: float = 0.0

    def __post_init__(self):
        vals = [getattr(self, f) for f in _WEIGHT_FIELDS]
        if any(v < 0 for v in vals):
            raise ConfigError("loss weights must be non-negative")
        if not any(v > 0 for v in vals):
            raise ConfigError("at least one loss weight must be positive")

    @staticmethod
    def preset(name: str) -> "LossWeights":
        if name == "l1-normal":
            return LossWeights(mask_l1=1.0, ao_l1=1.0, normal_l1=10.0,
                               color_temporal=0.1)
        raise ConfigError(f"unknown loss preset {name!r}")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in _WEIGHT_FIELDS}

    @staticmethod
    def from_dict(d: dict) -> "LossWeights":
        return LossWeights(**{k: float(v) for k, v in d.items()})

    @property
    def needs_perceptual(self) -> bool:
        return self.normal_perceptual > 0 or self.color_perceptual > 0

    @property
    def needs_color(self) -> bool:
        return self.color_perceptual > 0 or self.color_temporal > 0


def mask_weights(gt_mask: np.ndarray) -> np.ndarray:
    """Per-pixel weights (M + 1) / 2 from a ground-truth mask in {-1,+1};
    shape (B, 1, H, W)."""
    m = np.asarray(gt_mask)
    if m.ndim == 2:
        m = m[None, None]
    elif m.ndim == 3:
        m = m[:, None]
    return ((m + 1.0) * 0.5).astype(m.dtype)


def _as_const(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return ad.tensor(np.asarray(x, dtype=dtype))


def _weighted_mean(err: Tensor, weights: np.ndarray | None) -> Tensor:
    """Mean over batch/channels/pixels; with weights, pixels are averaged
    by total weight mass so empty regions carry nothing."""
    if weights is None:
        return ad.tmean(err)
    c = err.data.shape[1]
    wsum = float(weights.sum()) * c
    if wsum <= 0.0:
        return ad.mul(ad.tsum(err), 0.0)
    return ad.mul(ad.tsum(ad.mul(err, ad.tensor(weights.astype(err.data.dtype)))),
                  1.0 / wsum)


def spatial_loss(x_est: Tensor, x_gt, norm: str = "l1",
                 weights: np.ndarray | None = None) -> Tensor:
    """Masked L1 or squared-L2 distance to the ground truth."""
    gt = _as_const(x_gt, x_est.data.dtype)
    if x_est.data.shape != gt.data.shape:
        raise ShapeError(f"shape mismatch {x_est.data.shape} vs {gt.data.shape}")
    d = ad.sub(x_est, gt)
    if norm == "l1":
        err = ad.absolute(d)
    elif norm == "l2":
        err = ad.mul(d, d)
    else:
        raise ConfigError(f"norm must be 'l1' or 'l2', got {norm!r}")
    return _weighted_mean(err, weights)


def temporal_loss(x_t: Tensor, x_warped_prev: Tensor,
                  weights: np.ndarray | None = None) -> Tensor:
    """Masked mean squared difference between the current estimate and
    the warped previous estimate."""
    if x_t.data.shape != x_warped_prev.data.shape:
        raise ShapeError(f"shape mismatch {x_t.data.shape} vs {x_warped_prev.data.shape}")
    d = ad.sub(x_t, x_warped_prev)
    return _weighted_mean(ad.mul(d, d), weights)


class FeatureNetwork:
    """Fixed random-weight conv stack for perceptual distances.

    Four 3x3 conv + ReLU layers (channels 8/16/32/64) with stride-2
    average pooling between them. Per-layer scales are calibrated once
    so every layer has the same mean absolute activation on a fixed
    random batch; parameters are immutable afterwards.
    """

    CHANNELS = (8, 16, 32, 64)

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng([int(seed), 0x0F])
        self.weights = []
        self.biases = []
        cin = 3
        for cout in self.CHANNELS:
            std = np.sqrt(2.0 / (cin * 9))
            w = ad.tensor((rng.standard_normal((cout, cin, 3, 3)) * std).astype(np.float32))
            b = ad.tensor(np.zeros(cout, dtype=np.float32))
            self.weights.append(w)
            self.biases.append(b)
            cin = cout
        calib = ad.tensor(rng.random((4, 3, 16, 16)).astype(np.float32))
        with ad.no_grad():
            acts = self._activations(calib)
        self.scales = [1.0 / max(float(np.abs(a.data).mean()), 1e-6) for a in acts]

    def _activations(self, x: Tensor) -> list[Tensor]:
        acts = []
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if i > 0:
                h = ad.avg_pool2(h)
            h = ad.relu(ad.conv2d(h, w, b))
            acts.append(h)
        return acts

    def __call__(self, x: Tensor) -> list[Tensor]:
        """Scaled activations of every layer for a (B, 3, H, W) input in
        [0, 1]; H and W must be divisible by 8."""
        if x.data.ndim != 4 or x.data.shape[1] != 3:
            raise ShapeError(f"feature network expects (B, 3, H, W), got {x.data.shape}")
        return [ad.mul(a, s) for a, s in zip(self._activations(x), self.scales)]


def to_rgb01(x: Tensor, kind: str) -> Tensor:
    """Map a tensor into [0,1]^3 for the feature network: normals are
    rescaled from [-1,1], scalar maps are replicated to three channels."""
    if kind == "normal":
        return ad.mul(ad.add(x, 1.0), 0.5)
    if kind == "scalar":
        return ad.concat([x, x, x], axis=1)
    if kind == "color":
        return x
    raise ConfigError(f"unknown perceptual input kind {kind!r}")


def perceptual_loss(x_est: Tensor, x_gt, feature_net: FeatureNetwork,
                    weights: np.ndarray | None = None) -> Tensor:
    """Sum over layers of the mean squared activation difference.

    Inputs must already live in [0,1]^3 (see ``to_rgb01``). Masking
    multiplies both inputs by the pixel weights before feature
    extraction, so masked-out pixel values cannot influence the loss.
    """
    gt = _as_const(x_gt, x_est.data.dtype)
    if x_est.data.shape != gt.data.shape:
        raise ShapeError(f"shape mismatch {x_est.data.shape} vs {gt.data.shape}")
    if weights is not None:
        wt = ad.tensor(weights.astype(x_est.data.dtype))
        x_est = ad.mul(x_est, wt)
        gt = ad.mul(gt, wt)
    fa = feature_net(x_est)
    fb = feature_net(gt)
    total = None
    for a, b in zip(fa, fb):
        d = ad.sub(a, b)
        term = ad.tmean(ad.mul(d, d))
        total = term if total is None else ad.add(total, term)
    return total


def total_loss(o_est: Tensor, o_gt: np.ndarray, weights: LossWeights,
               c_est: Tensor | None = None, c_gt: np.ndarray | None = None,
               warped_prev: Tensor | None = None,
               c_warped_prev: Tensor | None = None,
               feature_net: FeatureNetwork | None = None) -> Tensor:
    """Weighted sum of the enabled loss terms for one frame.

    ``o_est``/``o_gt`` are the 6-channel maps; color inputs are needed
    only when a color term is enabled, the warped previous maps only
    when a temporal term is enabled (skipped on the first frame).
    """
    if weights.needs_perceptual and feature_net is None:
        raise ConfigError("perceptual weights set but no feature network given")
    if weights.needs_color and c_est is None:
        raise ConfigError("color weights set but no shaded color given")
    o_gt = np.asarray(o_gt, dtype=o_est.data.dtype)
    w = mask_weights(o_gt[:, 0:1])
    terms = []

    def addterm(lam, t):
        terms.append(ad.mul(t, float(lam)))

    if weights.mask_l1 > 0:
        addterm(weights.mask_l1, spatial_loss(o_est[:, 0:1], o_gt[:, 0:1], "l1", None))
    if weights.ao_l1 > 0:
        addterm(weights.ao_l1, spatial_loss(o_est[:, 5:6], o_gt[:, 5:6], "l1", w))
    if weights.normal_l1 > 0:
        addterm(weights.normal_l1, spatial_loss(o_est[:, 1:4], o_gt[:, 1:4], "l1", w))
    if weights.normal_perceptual > 0:
        addterm(weights.normal_perceptual,
                perceptual_loss(to_rgb01(o_est[:, 1:4], "normal"),
                                to_rgb01(ad.tensor(o_gt[:, 1:4]), "normal"),
                                feature_net, w))
    if weights.color_perceptual > 0:
        addterm(weights.color_perceptual,
                perceptual_loss(c_est, np.asarray(c_gt, dtype=o_est.data.dtype),
                                feature_net, w))
    if warped_prev is not None:
        if weights.ao_temporal > 0:
            addterm(weights.ao_temporal,
                    temporal_loss(o_est[:, 5:6], warped_prev[:, 5:6], w))
        if weights.normal_temporal > 0:
            addterm(weights.normal_temporal,
                    temporal_loss(o_est[:, 1:4], warped_prev[:, 1:4], w))
        if weights.color_temporal > 0 and c_warped_prev is not None:
            addterm(weights.color_temporal, temporal_loss(c_est, c_warped_prev, w))
    if not terms:
        # temporal-only objectives contribute nothing on the first frame
        return ad.tensor(np.zeros((), dtype=o_est.data.dtype))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total
