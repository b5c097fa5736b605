"""Sequence-unrolled training of the super-resolution network and PSNR
evaluation against interpolation baselines.

Each optimization step draws a batch of crop sequences, unrolls the
recurrent pipeline over all frames with gradients flowing through the
whole unroll (warps included), averages the per-frame objective, and
applies one Adam update. Everything is deterministic per seed.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import CropSequence, Dataset
from .errors import ConfigError, ShapeError, TrainingDiverged
from .losses import FeatureNetwork, LossWeights, total_loss
from .pipeline import UPSCALE, warp
from .shading import ShadingParams, shade, shade_arrays
from .srnet import SRNet, SRNetConfig, clamp_ao

TRAIN_CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "net": {
            "type": "object",
            "properties": {
                "base_channels": {"type": "integer", "minimum": 1},
                "residual_blocks": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "weights": {
            "anyOf": [
                {"type": "string"},
                {"type": "object",
                 "additionalProperties": {"type": "number", "minimum": 0}},
            ]
        },
        "optimizer": {
            "type": "object",
            "properties": {
                "kind": {"type": "string", "enum": ["adam"]},
                "lr": {"type": "number", "minimum": 0},
                "betas": {"type": "array", "items": {"type": "number"},
                          "minItems": 2, "maxItems": 2},
                "eps": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "steps": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "data_dir": {"type": "string"},
        "split_fraction": {"type": "number", "exclusiveMinimum": 0,
                           "exclusiveMaximum": 1},
        "val_interval": {"type": "integer", "minimum": 0},
        "val_crops": {"type": "integer", "minimum": 1},
        "feature_seed": {"type": "integer"},
        "shading": {"type": "object"},
    },
    "additionalProperties": False,
}


@dataclass
class TrainConfig:
    net: SRNetConfig = field(default_factory=SRNetConfig)
    weights: LossWeights = field(default_factory=lambda: LossWeights.preset("l1-normal"))
    optimizer_kind: str = "adam"
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    steps: int = 2000
    batch_size: int = 4
    seed: int = 0
    data_dir: str = ""
    split_fraction: float = 0.8
    val_interval: int = 200
    val_crops: int = 8
    feature_seed: int = 0
    shading: ShadingParams = field(default_factory=ShadingParams)

    def to_dict(self) -> dict:
        return {
            "net": self.net.to_dict(),
            "weights": self.weights.to_dict(),
            "optimizer": {"kind": self.optimizer_kind, "lr": self.lr,
                          "betas": list(self.betas), "eps": self.adam_eps},
            "steps": self.steps,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "data_dir": self.data_dir,
            "split_fraction": self.split_fraction,
            "val_interval": self.val_interval,
            "val_crops": self.val_crops,
            "feature_seed": self.feature_seed,
            "shading": self.shading.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        try:
            jsonschema.validate(d, TRAIN_CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            raise ConfigError(f"bad training config: {e.message}") from e
        cfg = TrainConfig()
        if "net" in d:
            cfg.net = SRNetConfig.from_dict({**cfg.net.to_dict(), **d["net"]})
        if "weights" in d:
            w = d["weights"]
            cfg.weights = LossWeights.preset(w) if isinstance(w, str) else LossWeights.from_dict(w)
        opt = d.get("optimizer", {})
        cfg.optimizer_kind = opt.get("kind", cfg.optimizer_kind)
        cfg.lr = float(opt.get("lr", cfg.lr))
        cfg.betas = tuple(opt.get("betas", cfg.betas))
        cfg.adam_eps = float(opt.get("eps", cfg.adam_eps))
        for k in ("steps", "batch_size", "seed", "val_interval", "val_crops",
                  "feature_seed"):
            if k in d:
                setattr(cfg, k, int(d[k]))
        if "data_dir" in d:
            cfg.data_dir = str(d["data_dir"])
        if "split_fraction" in d:
            cfg.split_fraction = float(d["split_fraction"])
        if "shading" in d:
            cfg.shading = ShadingParams.from_dict({**ShadingParams().to_dict(),
                                                   **d["shading"]})
        return cfg


class Adam:
    """Standard Adam with bias correction; state is per-parameter numpy
    arrays, so updates are bit-deterministic."""

    def __init__(self, params: list[Tensor], lr: float = 1e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * (g * g)
            mhat = self.m[i] / (1 - self.b1 ** self.t)
            vhat = self.v[i] / (1 - self.b2 ** self.t)
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) for images in [0, 1]; +inf for identical inputs."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


class _CropCache:
    """Derived per-crop arrays (dense upscaled flow, shaded GT color)."""

    def __init__(self, dataset: Dataset, shading: ShadingParams):
        self.dataset = dataset
        self.shading = shading
        self._flow: dict[int, np.ndarray] = {}
        self._color: dict[int, np.ndarray] = {}

    def flow_hr(self, crop_id: int, crop: CropSequence) -> np.ndarray:
        out = self._flow.get(crop_id)
        if out is None:
            dense = crop.dense_flow()  # (T, 2, h, w)
            with ad.no_grad():
                up = ad.bilinear_upsample(ad.tensor(dense), UPSCALE)
            out = up.data * float(UPSCALE)
            self._flow[crop_id] = out
        return out

    def gt_color(self, crop_id: int, crop: CropSequence) -> np.ndarray:
        out = self._color.get(crop_id)
        if out is None:
            out = np.stack([shade_arrays(crop.gt[t], self.shading)
                            for t in range(crop.n_frames)])
            self._color[crop_id] = out
        return out


def unroll_loss(net: SRNet, lr_seq: np.ndarray, flow_hr_seq: np.ndarray,
                gt_seq: np.ndarray, weights: LossWeights,
                shading: ShadingParams, gt_color_seq: np.ndarray | None = None,
                feature_net: FeatureNetwork | None = None) -> Tensor:
    """Average per-frame objective over one batched unrolled sequence.

    Shapes: lr (B, T, 5, h, w), flow_hr (B, T, 2, 4h, 4w),
    gt (B, T, 6, 4h, 4w). Gradients flow through the whole unroll; the
    AO channel is left unclamped for the losses. Temporal terms start
    at frame 1.
    """
    b, t_frames = lr_seq.shape[:2]
    h, w = lr_seq.shape[3:]
    state = ad.tensor(np.zeros((b, 6, UPSCALE * h, UPSCALE * w), dtype=np.float32))
    total = None
    for t in range(t_frames):
        if t == 0:
            warped = state
        else:
            warped = warp(state, flow_hr_seq[:, t])
        o_flat = ad.space_to_depth(warped, block=UPSCALE)
        o_est = net.forward(ad.tensor(lr_seq[:, t]), o_flat)
        c_est = shade(o_est, shading) if weights.needs_color else None
        c_warped = (shade(warped, shading)
                    if weights.color_temporal > 0 and t > 0 else None)
        loss_t = total_loss(
            o_est, gt_seq[:, t], weights, c_est=c_est,
            c_gt=gt_color_seq[:, t] if gt_color_seq is not None else None,
            warped_prev=warped if t > 0 else None,
            c_warped_prev=c_warped, feature_net=feature_net)
        total = loss_t if total is None else ad.add(total, loss_t)
        state = o_est
    return ad.mul(total, 1.0 / t_frames)


def train(config: TrainConfig, dataset: Dataset | None = None,
          metrics_path=None, progress=None, early_stop=None):
    """Run the optimization; returns (net, metrics list).

    Aborts with TrainingDiverged if the loss goes non-finite. Writes one
    JSON record per step to ``metrics_path`` when given. ``early_stop``
    is an optional ``f(step, loss) -> bool`` checked after each step.
    """
    if config.optimizer_kind != "adam":
        raise ConfigError(f"unknown optimizer {config.optimizer_kind!r}")
    if dataset is None:
        dataset = Dataset(config.data_dir)
    train_ids = dataset.train_ids or dataset.crop_ids
    if not train_ids:
        raise ConfigError("dataset has no training crops")
    weights = config.weights
    feature_net = FeatureNetwork(config.feature_seed) if weights.needs_perceptual else None
    needs_gt_color = weights.color_perceptual > 0
    cache = _CropCache(dataset, config.shading)

    net = SRNet.build(config.net, config.seed)
    opt = Adam(net.parameters(), lr=config.lr, betas=config.betas, eps=config.adam_eps)
    rng = np.random.default_rng([config.seed, 0x7EA1])
    metrics: list[dict] = []
    sink = open(metrics_path, "w") if metrics_path else None

    def emit(rec):
        metrics.append(rec)
        if sink:
            sink.write(json.dumps(rec) + "\n")
            sink.flush()

    try:
        for step_i in range(config.steps):
            ids = rng.choice(train_ids, size=config.batch_size,
                             replace=len(train_ids) < config.batch_size)
            crops = [dataset.load(int(i)) for i in ids]
            lr_seq = np.stack([c.lr for c in crops])
            gt_seq = np.stack([c.gt for c in crops])
            flow_hr = np.stack([cache.flow_hr(int(i), c) for i, c in zip(ids, crops)])
            gt_color = (np.stack([cache.gt_color(int(i), c) for i, c in zip(ids, crops)])
                        if needs_gt_color else None)

            t0 = time.perf_counter()
            loss = unroll_loss(net, lr_seq, flow_hr, gt_seq, weights,
                               config.shading, gt_color, feature_net)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainingDiverged(step_i, loss_val)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            rec = {"step": step_i, "loss": loss_val,
                   "seconds": round(time.perf_counter() - t0, 4)}
            emit(rec)

            if (config.val_interval and dataset.val_ids
                    and (step_i % config.val_interval == 0 or step_i == config.steps - 1)):
                val = validate(net, dataset, config, cache, feature_net)
                emit({"step": step_i, **val})
            if progress is not None:
                progress(step_i + 1, config.steps, loss_val)
            if early_stop is not None and early_stop(step_i, loss_val):
                break
    finally:
        if sink:
            sink.close()
    return net, metrics


def validate(net: SRNet, dataset: Dataset, config: TrainConfig,
             cache: _CropCache | None = None,
             feature_net: FeatureNetwork | None = None) -> dict:
    """Objective and PSNR on a fixed subset of the validation crops."""
    if cache is None:
        cache = _CropCache(dataset, config.shading)
    ids = dataset.val_ids[:config.val_crops]
    losses = []
    evals = {"psnr_net": [], "psnr_bilinear": []}
    for crop_id in ids:
        crop = dataset.load(crop_id)
        flow_hr = cache.flow_hr(crop_id, crop)[None]
        gt_color = cache.gt_color(crop_id, crop)
        with ad.no_grad():
            loss = unroll_loss(net, crop.lr[None], flow_hr, crop.gt[None],
                               config.weights, config.shading,
                               gt_color[None] if config.weights.color_perceptual > 0 else None,
                               feature_net)
        losses.append(loss.item())
        r = _eval_crop(net, crop, flow_hr[0], gt_color, config.shading)
        evals["psnr_net"].append(r["psnr_net"])
        evals["psnr_bilinear"].append(r["psnr_bilinear"])
    return {"val_loss": float(np.mean(losses)),
            "val_psnr_net": float(np.mean(evals["psnr_net"])),
            "val_psnr_bilinear": float(np.mean(evals["psnr_bilinear"]))}


def _baseline_channels(lr_frame: np.ndarray, mode: str) -> np.ndarray:
    """Upscale the 5 G-buffer channels 4x and append AO = 1."""
    if mode == "nearest":
        up = np.repeat(np.repeat(lr_frame, UPSCALE, axis=1), UPSCALE, axis=2)
    elif mode == "bilinear":
        with ad.no_grad():
            up = ad.bilinear_upsample(ad.tensor(lr_frame[None]), UPSCALE).data[0]
    else:
        raise ConfigError(f"unknown baseline {mode!r}")
    ao = np.ones((1,) + up.shape[1:], dtype=up.dtype)
    return np.concatenate([up, ao], axis=0)


def _eval_crop(net: SRNet, crop: CropSequence, flow_hr: np.ndarray,
               gt_color: np.ndarray, shading: ShadingParams) -> dict:
    """Per-crop mean PSNRs of the network and both baselines."""
    t_frames = crop.n_frames
    h, w = crop.lr.shape[2:]
    state = ad.tensor(np.zeros((1, 6, UPSCALE * h, UPSCALE * w), dtype=np.float32))
    scores = {"psnr_net": [], "psnr_bilinear": [], "psnr_nearest": []}
    with ad.no_grad():
        for t in range(t_frames):
            warped = state if t == 0 else warp(state, flow_hr[t])
            o_flat = ad.space_to_depth(warped, block=UPSCALE)
            o_est = clamp_ao(net.forward(ad.tensor(crop.lr[t][None]), o_flat))
            color = shade(o_est, shading).data[0]
            scores["psnr_net"].append(psnr(color, gt_color[t]))
            for mode in ("nearest", "bilinear"):
                base = shade_arrays(_baseline_channels(crop.lr[t], mode), shading)
                scores[f"psnr_{mode}"].append(psnr(base, gt_color[t]))
            state = o_est
    return {k: float(np.mean(v)) for k, v in scores.items()}


def evaluate(net: SRNet, dataset: Dataset, shading: ShadingParams,
             crop_ids=None) -> dict:
    """PSNR of the recurrent network vs nearest/bilinear baselines on
    held-out crops, averaged over frames and crops."""
    ids = list(crop_ids) if crop_ids is not None else dataset.val_ids
    if not ids:
        raise ConfigError("no validation crops to evaluate")
    cache = _CropCache(dataset, shading)
    agg = {"psnr_net": [], "psnr_bilinear": [], "psnr_nearest": []}
    for crop_id in ids:
        crop = dataset.load(crop_id)
        flow_hr = cache.flow_hr(crop_id, crop)
        gt_color = cache.gt_color(crop_id, crop)
        r = _eval_crop(net, crop, flow_hr, gt_color, shading)
        for k in agg:
            agg[k].append(r[k])
    return {k: float(np.mean(v)) for k, v in agg.items()}
