"""Training-data generation and loading.

Sequences are rendered along random orbital camera paths: a low-res
G-buffer and screen-space flow per frame plus 4x ground truth with
ray-traced ambient occlusion. Fixed-size crops are then cut from each
sequence, rejection-sampled until every frame of the crop window is
filled to the minimum fraction. Everything is deterministic per seed.

On-disk layout under the dataset root:
    seq_0000/frame_00.lr.isrb    5 channels (mask, nx, ny, nz, depth)
    seq_0000/frame_00.flow.isrb  2 channels (dx, dy), sparse
    seq_0000/frame_00.gt.isrb    6 channels (mask, nx, ny, nz, depth, ao)
    manifest.json                seed, parameters, crop table, train/val split
"""
from __future__ import annotations

import json
import os
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .formats import read_buffer, write_buffer
from .inpaint import inpaint_dense
from .raycast import (
    Camera,
    FlowField,
    render_gbuffer,
    render_ground_truth,
    render_hits,
    screen_space_flow,
)
from .volume import ScalarVolume, build_pyramid

MANIFEST_NAME = "manifest.json"

# paper-scale recipe: 500 sequences x 10 frames at 128^2, 5000 crops of
# 32^2 filled to at least 50%; desk scale shrinks the counts to keep a
# full run on one CPU inside an hour
PAPER_SCALE = dict(n_sequences=500, frames_per_seq=10, base_res=128,
                   crop_size=32, n_crops=5000, min_fill=0.5)
DESK_SCALE = dict(n_sequences=40, frames_per_seq=5, base_res=64,
                  crop_size=32, n_crops=400, min_fill=0.5)

CROP_RETRY_FACTOR = 200


def orbit_cameras(vol: ScalarVolume, n_frames: int, rng: np.random.Generator,
                  resolution) -> list[Camera]:
    """Random orbital path: a random rotation axis, angular steps of at
    most 5 degrees per frame, and slight per-frame zoom jitter."""
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    theta0 = rng.uniform(0.0, 2 * np.pi)
    dtheta = np.radians(rng.uniform(2.0, 5.0))
    radius = 0.85 * vol.diagonal
    center = vol.world_center
    cams = []
    for t in range(n_frames):
        theta = theta0 + t * dtheta
        r_t = radius * (1.0 + 0.03 * rng.uniform(-1.0, 1.0))
        eye = center + (np.cos(theta) * u + np.sin(theta) * v) * r_t
        cams.append(Camera.framing(vol, eye=eye, resolution=resolution, up=axis))
    return cams


def render_sequence(vol: ScalarVolume, cams: list[Camera], iso: float,
                    ao_samples: int, seed: int):
    """Render one camera path; yields (GBuffer, FlowField, HiResFields)
    per frame. The flow of frame 0 is all-invalid by construction (no
    previous camera)."""
    pyr = build_pyramid(vol)
    out = []
    for t, cam in enumerate(cams):
        hits = render_hits(vol, pyr, cam, iso)
        gb = render_gbuffer(vol, pyr, cam, iso, hits=hits)
        if t == 0:
            flow = FlowField(flow=np.zeros((2,) + gb.mask.shape, dtype=np.float32),
                             valid=np.zeros_like(hits.hit))
        else:
            flow = screen_space_flow(hits, cam, cams[t - 1])
        gt = render_ground_truth(vol, pyr, cam.hires(4), iso,
                                 ao_samples=ao_samples,
                                 seed=(seed * 1000003 + t) & 0x7FFFFFFF)
        out.append((gb, flow, gt))
    return out


def _crop_frames(frames, x0: int, y0: int, size: int):
    """Cut the (lr, flow, gt) stacks of a crop window; the GT window is
    4x the low-res one."""
    lr, fl, gt = [], [], []
    for gb, flow, gtf in frames:
        lr.append(gb.channels()[:, y0:y0 + size, x0:x0 + size])
        fl.append(flow.flow[:, y0:y0 + size, x0:x0 + size])
        g = gtf.channels()[:, 4 * y0:4 * (y0 + size), 4 * x0:4 * (x0 + size)]
        gt.append(g)
    return np.stack(lr), np.stack(fl), np.stack(gt)


def generate_dataset(volumes, out_dir, n_sequences: int, frames_per_seq: int,
                     base_res: int, crop_size: int, n_crops: int,
                     min_fill: float, seed: int, ao_samples: int = 128,
                     split_fraction: float = 0.8, progress=None) -> dict:
    """Render sequences and extract crops; returns the manifest dict.

    ``volumes`` is a list of (name, ScalarVolume). Sequences cycle
    through the volumes. Crops are rejected until the hit fraction of
    every frame inside the window reaches ``min_fill``; sequences that
    cannot fill their quota within the retry budget are reported in the
    manifest under "skipped".
    """
    if not volumes:
        raise ConfigError("need at least one volume")
    if frames_per_seq < 2:
        raise ConfigError("sequences need at least 2 frames")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    quota = [n_crops // n_sequences] * n_sequences
    for i in range(n_crops - sum(quota)):
        quota[i] += 1

    crops = []
    skipped = []
    crop_id = 0
    seq_of_crop = {}
    for si in range(n_sequences):
        name, vol = volumes[si % len(volumes)]
        rng = np.random.default_rng([seed, si])
        cams = orbit_cameras(vol, frames_per_seq, rng, (base_res, base_res))
        frames = render_sequence(vol, cams, vol.default_iso, ao_samples,
                                 seed=seed * 131 + si)
        masks = np.stack([gb.mask for gb, _, _ in frames])  # (T, H, W)
        hit = masks > 0
        need = quota[si]
        got = 0
        budget = CROP_RETRY_FACTOR * need
        max_xy = base_res - crop_size
        while got < need and budget > 0:
            budget -= 1
            x0 = int(rng.integers(0, max_xy + 1))
            y0 = int(rng.integers(0, max_xy + 1))
            window = hit[:, y0:y0 + crop_size, x0:x0 + crop_size]
            fills = window.mean(axis=(1, 2))
            if fills.min() < min_fill:
                continue
            lr, fl, gt = _crop_frames(frames, x0, y0, crop_size)
            d = out / f"seq_{crop_id:04d}"
            d.mkdir(exist_ok=True)
            for t in range(frames_per_seq):
                write_buffer(d / f"frame_{t:02d}.lr.isrb", lr[t])
                write_buffer(d / f"frame_{t:02d}.flow.isrb", fl[t])
                write_buffer(d / f"frame_{t:02d}.gt.isrb", gt[t])
            crops.append({"id": crop_id, "source_sequence": si, "volume": name,
                          "origin": [x0, y0]})
            seq_of_crop[crop_id] = si
            crop_id += 1
            got += 1
        if got < need:
            skipped.append({"sequence": si, "volume": name,
                            "crops_missing": need - got})
        if progress is not None:
            progress(si + 1, n_sequences)

    # hold out by source sequence, not by crop, to prevent leakage
    seq_ids = sorted({c["source_sequence"] for c in crops})
    order = np.random.default_rng([seed, 0xA11]).permutation(len(seq_ids))
    n_train = max(1, int(round(split_fraction * len(seq_ids))))
    if len(seq_ids) > 1:
        n_train = min(n_train, len(seq_ids) - 1)
    train_seqs = {seq_ids[i] for i in order[:n_train]}
    split = {
        "train": [c["id"] for c in crops if c["source_sequence"] in train_seqs],
        "val": [c["id"] for c in crops if c["source_sequence"] not in train_seqs],
    }
    manifest = {
        "seed": seed,
        "params": {
            "n_sequences": n_sequences, "frames_per_seq": frames_per_seq,
            "base_res": base_res, "crop_size": crop_size, "n_crops": n_crops,
            "min_fill": min_fill, "ao_samples": ao_samples,
            "split_fraction": split_fraction,
        },
        "volumes": [name for name, _ in volumes],
        "crops": crops,
        "split": split,
        "skipped": skipped,
    }
    with open(out / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


@dataclass
class CropSequence:
    """One training sample: per-frame arrays over T frames."""

    lr: np.ndarray          # (T, 5, h, w)
    flow_sparse: np.ndarray  # (T, 2, h, w)
    gt: np.ndarray          # (T, 6, 4h, 4w)

    @property
    def n_frames(self) -> int:
        return self.lr.shape[0]

    def dense_flow(self) -> np.ndarray:
        """Inpainted per-frame flow; frame 0 stays zero (no previous
        frame exists)."""
        t, _, h, w = self.flow_sparse.shape
        out = np.zeros_like(self.flow_sparse)
        for i in range(1, t):
            valid = self.lr[i, 0] > 0
            ff = inpaint_dense(FlowField(flow=self.flow_sparse[i], valid=valid))
            out[i] = ff.flow
        return out


class Dataset:
    """Lazy reader over a generated dataset directory with a small
    in-memory cache of decoded crops."""

    def __init__(self, root, cache_size: int = 512):
        self.root = Path(root)
        manifest_path = self.root / MANIFEST_NAME
        if not manifest_path.exists():
            raise FormatError(f"{manifest_path} not found")
        with open(manifest_path) as f:
            self.manifest = json.load(f)
        self.frames_per_seq = int(self.manifest["params"]["frames_per_seq"])
        self.crop_ids = [c["id"] for c in self.manifest["crops"]]
        self.train_ids = list(self.manifest["split"]["train"])
        self.val_ids = list(self.manifest["split"]["val"])
        self._cache: OrderedDict[int, CropSequence] = OrderedDict()
        self._cache_size = cache_size

    def __len__(self) -> int:
        return len(self.crop_ids)

    def load(self, crop_id: int) -> CropSequence:
        hit = self._cache.get(crop_id)
        if hit is not None:
            self._cache.move_to_end(crop_id)
            return hit
        d = self.root / f"seq_{crop_id:04d}"
        lr, fl, gt = [], [], []
        for t in range(self.frames_per_seq):
            lr.append(read_buffer(d / f"frame_{t:02d}.lr.isrb"))
            fl.append(read_buffer(d / f"frame_{t:02d}.flow.isrb"))
            gt.append(read_buffer(d / f"frame_{t:02d}.gt.isrb"))
        crop = CropSequence(lr=np.stack(lr), flow_sparse=np.stack(fl), gt=np.stack(gt))
        self._cache[crop_id] = crop
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return crop


def dataset_fingerprint(root) -> str:
    """SHA-256 over the manifest and every buffer file (order-stable);
    used by determinism checks."""
    import hashlib

    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()
