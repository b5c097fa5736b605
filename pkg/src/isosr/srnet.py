"""Frame-recurrent 4x super-resolution network.

Input is the 5-channel low-resolution G-buffer concatenated with the
96-channel flattened warp of the previous high-resolution estimate. A
head convolution reduces to the base width, a stack of residual blocks
processes it, two upscaling stages (2x bilinear + conv + ReLU) reach 4x
resolution, and two final convolutions emit 6 channels. The first five
output channels (mask, normal, depth) are residuals added to a bilinear
4x upsample of the input; the ambient-occlusion channel is produced
directly, having no low-resolution counterpart.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, FormatError, ShapeError

CHECKPOINT_MAGIC = b"ISCK1\n"
CHECKPOINT_VERSION = 1

OUT_CHANNELS = 6
UPSCALE = 4
IN_CHANNELS = 5 + UPSCALE * UPSCALE * OUT_CHANNELS  # 101


@dataclass(frozen=True)
class SRNetConfig:
    """Width/depth configuration; channel counts and the 4x factor are
    fixed by the pipeline's map layout."""

    base_channels: int = 64
    residual_blocks: int = 10

    def __post_init__(self):
        if self.base_channels < 1 or self.residual_blocks < 1:
            raise ConfigError("base_channels and residual_blocks must be positive")

    @property
    def in_channels(self) -> int:
        return IN_CHANNELS

    @property
    def out_channels(self) -> int:
        return OUT_CHANNELS

    @property
    def upscale(self) -> int:
        return UPSCALE

    def to_dict(self) -> dict:
        return {"base_channels": self.base_channels, "residual_blocks": self.residual_blocks}

    @staticmethod
    def from_dict(d: dict) -> "SRNetConfig":
        return SRNetConfig(base_channels=int(d["base_channels"]),
                           residual_blocks=int(d["residual_blocks"]))


TINY_CONFIG = SRNetConfig(base_channels=8, residual_blocks=2)


def _param_specs(cfg: SRNetConfig) -> list[tuple[str, tuple]]:
    c = cfg.base_channels
    specs = [("head.w", (c, cfg.in_channels, 3, 3)), ("head.b", (c,))]
    for i in range(cfg.residual_blocks):
        specs += [(f"block{i}.conv1.w", (c, c, 3, 3)), (f"block{i}.conv1.b", (c,)),
                  (f"block{i}.conv2.w", (c, c, 3, 3)), (f"block{i}.conv2.b", (c,))]
    specs += [("up1.w", (c, c, 3, 3)), ("up1.b", (c,)),
              ("up2.w", (c, c, 3, 3)), ("up2.b", (c,)),
              ("tail1.w", (c, c, 3, 3)), ("tail1.b", (c,)),
              ("tail2.w", (OUT_CHANNELS, c, 3, 3)), ("tail2.b", (OUT_CHANNELS,))]
    return specs


class SRNet:
    """Network parameters plus the forward pass."""

    def __init__(self, config: SRNetConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @staticmethod
    def build(config: SRNetConfig, seed: int) -> "SRNet":
        """Deterministic per-seed init.

        Weights are scaled-normal (He, std = sqrt(2 / fan_in)) except the
        closing conv of each residual block and the output conv, which
        start at zero: every block then begins as the identity and the
        whole network as the plain bilinear upscaler, so early training
        adjusts the residual gently. (With a full-magnitude random output
        head, the large initial loss drives the upscale/tail ReLUs into
        total die-off within a few hundred Adam steps and the residual
        path never recovers.)

        Biases are zero except the ambient-occlusion output bias, which
        starts at 1 ("fully open"): AO has no residual path to lean on,
        and the open-sky prior is the right starting point.
        """
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}
        for name, shape in _param_specs(config):
            if name.endswith(".b"):
                data = np.zeros(shape, dtype=np.float32)
                if name == "tail2.b":
                    data[5] = 1.0
            elif name == "tail2.w" or name.endswith("conv2.w"):
                data = np.zeros(shape, dtype=np.float32)
            else:
                fan_in = shape[1] * shape[2] * shape[3]
                std = np.sqrt(2.0 / fan_in)
                data = (rng.standard_normal(shape) * std).astype(np.float32)
            params[name] = ad.tensor(data, requires_grad=True)
        return SRNet(config, params)

    def parameter_names(self) -> list[str]:
        return [name for name, _ in _param_specs(self.config)]

    def parameters(self) -> list[Tensor]:
        return [self.params[n] for n in self.parameter_names()]

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_like(self) -> "SRNet":
        """Copy with all parameters zeroed (residual path only)."""
        params = {n: ad.tensor(np.zeros_like(p.data), requires_grad=True)
                  for n, p in self.params.items()}
        return SRNet(self.config, params)

    def _conv(self, x: Tensor, name: str) -> Tensor:
        return ad.conv2d(x, self.params[name + ".w"], self.params[name + ".b"])

    def forward(self, i_lr: Tensor, o_flat: Tensor) -> Tensor:
        """(B, 5, H, W) + (B, 96, H, W) -> (B, 6, 4H, 4W)."""
        if i_lr.data.ndim != 4 or i_lr.data.shape[1] != 5:
            raise ShapeError(f"expected (B, 5, H, W) input, got {i_lr.data.shape}")
        if o_flat.data.ndim != 4 or o_flat.data.shape[1] != IN_CHANNELS - 5:
            raise ShapeError(f"expected (B, 96, H, W) recurrent input, got {o_flat.data.shape}")
        if i_lr.data.shape[2:] != o_flat.data.shape[2:] or i_lr.data.shape[0] != o_flat.data.shape[0]:
            raise ShapeError(f"mismatched inputs {i_lr.data.shape} vs {o_flat.data.shape}")

        h = ad.relu(self._conv(ad.concat([i_lr, o_flat], axis=1), "head"))
        for i in range(self.config.residual_blocks):
            t = self._conv(ad.relu(self._conv(h, f"block{i}.conv1")), f"block{i}.conv2")
            h = ad.add(h, t)
        h = ad.relu(self._conv(ad.bilinear_upsample(h, 2), "up1"))
        h = ad.relu(self._conv(ad.bilinear_upsample(h, 2), "up2"))
        h = ad.relu(self._conv(h, "tail1"))
        y = self._conv(h, "tail2")

        base = ad.bilinear_upsample(i_lr, 4)
        return ad.concat([ad.add(y[:, 0:5], base), y[:, 5:6]], axis=1)

    # -- checkpoint io --------------------------------------------------------
    def save(self, path: str | os.PathLike) -> None:
        specs = _param_specs(self.config)
        descriptors = []
        offset = 0
        blobs = []
        for name, shape in specs:
            arr = np.ascontiguousarray(self.params[name].data, dtype="<f4")
            if arr.shape != shape:
                raise ShapeError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            descriptors.append({"name": name, "shape": list(shape), "offset": offset})
            offset += arr.nbytes
            blobs.append(arr.tobytes())
        manifest = {"version": CHECKPOINT_VERSION, "config": self.config.to_dict(),
                    "tensors": descriptors}
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(json.dumps(manifest).encode("ascii") + b"\n")
            for b in blobs:
                f.write(b)

    @staticmethod
    def load(path: str | os.PathLike, expect_config: SRNetConfig | None = None) -> "SRNet":
        """Load a checkpoint; fully validates before constructing any state.

        ``expect_config`` rejects checkpoints of a different architecture
        with a ShapeError.
        """
        with open(path, "rb") as f:
            magic = f.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
            try:
                manifest = json.loads(f.readline())
            except ValueError as e:
                raise FormatError(f"{path}: bad manifest: {e}") from e
            payload = f.read()
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported version {manifest.get('version')!r}")
        try:
            config = SRNetConfig.from_dict(manifest["config"])
            tensors = manifest["tensors"]
        except (KeyError, TypeError, ConfigError) as e:
            raise FormatError(f"{path}: bad manifest: {e}") from e
        if expect_config is not None and config != expect_config:
            raise ShapeError(
                f"checkpoint config {config.to_dict()} does not match expected "
                f"{expect_config.to_dict()}")
        specs = _param_specs(config)
        if len(tensors) != len(specs) or any(
                t["name"] != n or tuple(t["shape"]) != s
                for t, (n, s) in zip(tensors, specs)):
            raise FormatError(f"{path}: tensor list does not match the declared config")
        total = sum(int(np.prod(s)) for _, s in specs) * 4
        if len(payload) != total:
            raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {total}")
        params: dict[str, Tensor] = {}
        for desc, (name, shape) in zip(tensors, specs):
            off = int(desc["offset"])
            n = int(np.prod(shape))
            arr = np.frombuffer(payload, dtype="<f4", count=n, offset=off).reshape(shape)
            params[name] = ad.tensor(arr.copy(), requires_grad=True)
        return SRNet(config, params)


def clamp_ao(o_est: Tensor) -> Tensor:
    """Clamp the ambient-occlusion channel to [0, 1] (inference only;
    losses see the raw channel)."""
    return ad.concat([o_est[:, 0:5], ad.clamp(o_est[:, 5:6], 0.0, 1.0)], axis=1)
