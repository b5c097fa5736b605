"""Command-line entry point: every pipeline stage as a subcommand.

Exit codes: 0 on success, 1 on usage errors, 2 on data/format errors.
Each command that writes outputs also writes the effective configuration
as JSON next to them, so runs are reproducible from the artifacts alone.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import IsosrError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _apply_thread_env():
    """ISOSR_THREADS caps worker threads; 0 or unset means automatic."""
    val = os.environ.get("ISOSR_THREADS", "0")
    try:
        n = int(val)
    except ValueError:
        return
    if n > 0:
        try:
            import numba

            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
        except Exception:
            pass


def _write_effective_config(out_path: Path, config: dict):
    side = out_path.with_name(out_path.name + ".config.json")
    with open(side, "w") as f:
        json.dump(config, f, indent=1, sort_keys=True)


def _parse_dims(text: str):
    parts = text.lower().split("x")
    if len(parts) == 1:
        n = int(parts[0])
        return (n, n, n)
    if len(parts) == 3:
        return tuple(int(p) for p in parts)
    raise ValueError(f"dims must be N or NXxNYxNZ, got {text!r}")


def _load_json(path):
    with open(path) as f:
        return json.load(f)


def _maybe_print_config(args, config: dict) -> bool:
    if getattr(args, "print_config", False):
        print(json.dumps(config, indent=1, sort_keys=True))
        return True
    return False


# -- subcommands ---------------------------------------------------------


def cmd_gen_volume(args) -> int:
    from .formats import write_volume
    from .volume import gen_procedural

    config = {"command": "gen-volume", "kind": args.kind,
              "dims": list(_parse_dims(args.dims)), "seed": args.seed}
    if _maybe_print_config(args, config):
        return EXIT_OK
    vol = gen_procedural(args.kind, _parse_dims(args.dims), args.seed)
    out = Path(args.out)
    write_volume(out, vol)
    _write_effective_config(out, config)
    print(f"wrote {out} ({vol.dims[0]}x{vol.dims[1]}x{vol.dims[2]}, iso {vol.default_iso})")
    return EXIT_OK


def _load_camera(vol, spec_path, resolution):
    """camera.json: either {"frames": [{"view": [16], "proj": [16]}...]}
    or {"orbit": {"frames": N, "seed": S}}."""
    from .dataset import orbit_cameras
    from .raycast import Camera

    spec = _load_json(spec_path)
    if "frames" in spec:
        cams = []
        for fr in spec["frames"]:
            view = np.array(fr["view"], dtype=np.float64).reshape(4, 4)
            proj = np.array(fr["proj"], dtype=np.float64).reshape(4, 4)
            near = float(fr.get("near", 0.1))
            far = float(fr.get("far", 10.0 * vol.diagonal))
            cams.append(Camera(view, proj, near, far, resolution))
        return cams
    if "orbit" in spec:
        rng = np.random.default_rng(int(spec["orbit"].get("seed", 0)))
        return orbit_cameras(vol, int(spec["orbit"].get("frames", 8)), rng, resolution)
    raise IsosrError(f"{spec_path}: camera spec needs 'frames' or 'orbit'")


def cmd_render(args) -> int:
    from .formats import read_volume, write_buffer
    from .raycast import Camera, render_gbuffer, render_ground_truth
    from .volume import build_pyramid

    config = {"command": "render", "vol": args.vol, "iso": args.iso,
              "camera": args.camera, "res": args.res,
              "ao_samples": args.ao_samples, "gt": args.gt, "seed": args.seed}
    if _maybe_print_config(args, config):
        return EXIT_OK
    vol = read_volume(args.vol)
    pyr = build_pyramid(vol)
    iso = vol.default_iso if args.iso is None else args.iso
    res = (args.res, args.res)
    if args.camera:
        cam = _load_camera(vol, args.camera, res)[0]
    else:
        eye = vol.world_center + np.array([0.0, -0.85 * vol.diagonal, 0.25 * vol.diagonal])
        cam = Camera.framing(vol, eye=eye, resolution=res)
    out = Path(args.out)
    if args.gt:
        fields = render_ground_truth(vol, pyr, cam.hires(4), iso,
                                     ao_samples=args.ao_samples, seed=args.seed)
        write_buffer(out, fields.channels())
    else:
        gb = render_gbuffer(vol, pyr, cam, iso)
        write_buffer(out, gb.channels())
    _write_effective_config(out, config)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    from .dataset import DESK_SCALE, generate_dataset
    from .formats import read_volume
    from .volume import gen_procedural

    spec = _load_json(args.config) if args.config else {}
    params = dict(DESK_SCALE)
    params.update({k: spec[k] for k in params if k in spec})
    seed = int(spec.get("seed", args.seed))
    ao_samples = int(spec.get("ao_samples", 128))
    split_fraction = float(spec.get("split_fraction", 0.8))
    volumes = []
    for v in spec.get("volumes", []):
        if isinstance(v, str):
            volumes.append((Path(v).stem, read_volume(v)))
        else:
            volumes.append((f"{v['kind']}-{v.get('seed', 0)}",
                            gen_procedural(v["kind"], v.get("dims", 64), v.get("seed", 0))))
    if not volumes:
        volumes = [(f"{kind}-{s}", gen_procedural(kind, 64, seed=s))
                   for s, kind in enumerate(("metaballs", "csg", "fractal-noise", "metaballs"))]
    config = {"command": "gen-dataset", **params, "seed": seed,
              "ao_samples": ao_samples, "split_fraction": split_fraction,
              "volumes": [n for n, _ in volumes]}
    if _maybe_print_config(args, config):
        return EXIT_OK

    def progress(done, total):
        print(f"  sequence {done}/{total}", flush=True)

    manifest = generate_dataset(volumes, args.out, seed=seed, ao_samples=ao_samples,
                                split_fraction=split_fraction,
                                progress=progress if args.verbose else None,
                                **params)
    print(f"wrote {len(manifest['crops'])} crops to {args.out}"
          + (f" ({len(manifest['skipped'])} sequences under quota)"
             if manifest["skipped"] else ""))
    return EXIT_OK


def cmd_train(args) -> int:
    from .dataset import Dataset
    from .train import TrainConfig, train

    spec = _load_json(args.config) if args.config else {}
    if args.data:
        spec["data_dir"] = args.data
    cfg = TrainConfig.from_dict(spec)
    if _maybe_print_config(args, {"command": "train", **cfg.to_dict()}):
        return EXIT_OK
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataset = Dataset(cfg.data_dir)
    metrics_path = out.with_name(out.stem + ".metrics.jsonl")

    def progress(step, total, loss):
        if step % max(1, total // 20) == 0 or step == total:
            print(f"  step {step}/{total}  loss {loss:.5f}", flush=True)

    net, metrics = train(cfg, dataset=dataset, metrics_path=metrics_path,
                         progress=progress if args.verbose else None)
    net.save(out)
    _write_effective_config(out, {"command": "train", **cfg.to_dict()})
    final = [m for m in metrics if "loss" in m]
    print(f"wrote {out} (final loss {final[-1]['loss']:.5f}, metrics in {metrics_path})")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .dataset import Dataset
    from .shading import ShadingParams
    from .srnet import SRNet
    from .train import evaluate

    net = SRNet.load(args.ckpt)
    dataset = Dataset(args.data)
    shading = (ShadingParams.from_dict(_load_json(args.shading))
               if args.shading else ShadingParams())
    result = evaluate(net, dataset, shading)
    print(json.dumps(result, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_infer(args) -> int:
    from .formats import read_volume, write_buffer
    from .pipeline import RecurrentState, step
    from .raycast import render_gbuffer, render_hits, screen_space_flow
    from .shading import ShadingParams, write_png
    from .srnet import SRNet
    from .volume import build_pyramid

    config = {"command": "infer", "ckpt": args.ckpt, "vol": args.vol,
              "path": args.path, "frames": args.frames, "res": args.res,
              "iso": args.iso}
    if _maybe_print_config(args, config):
        return EXIT_OK
    net = SRNet.load(args.ckpt)
    vol = read_volume(args.vol)
    pyr = build_pyramid(vol)
    iso = vol.default_iso if args.iso is None else args.iso
    res = (args.res, args.res)
    cams = _load_camera(vol, args.path, res)
    if args.frames:
        cams = cams[:args.frames]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    shading = ShadingParams()
    state = RecurrentState.initial(res[1], res[0])
    for t, cam in enumerate(cams):
        hits = render_hits(vol, pyr, cam, iso)
        gb = render_gbuffer(vol, pyr, cam, iso, hits=hits)
        flow = screen_space_flow(hits, cam, cams[t - 1]) if t > 0 else None
        fields, color, state = step(state, gb, flow, net, shading)
        write_buffer(out_dir / f"frame_{t:03d}.est.isrb", fields.channels())
        write_png(out_dir / f"frame_{t:03d}.png", color)
    _write_effective_config(out_dir / "run", config)
    print(f"wrote {len(cams)} frames to {out_dir}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .formats import read_volume
    from .service import create_app
    from .srnet import SRNet

    net = SRNet.load(args.ckpt)
    vol = read_volume(args.vol)
    app = create_app(net, vol, lr_resolution=(args.res, args.res))
    print(f"serving on port {args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="isosr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-volume", help="generate a procedural volume file")
    g.add_argument("--kind", required=True)
    g.add_argument("--dims", default="64")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--print-config", action="store_true")
    g.set_defaults(fn=cmd_gen_volume)

    r = sub.add_parser("render", help="render G-buffer or AO ground truth")
    r.add_argument("--vol", required=True)
    r.add_argument("--iso", type=float, default=None)
    r.add_argument("--camera", default=None, help="camera.json (first frame used)")
    r.add_argument("--res", type=int, default=64)
    r.add_argument("--ao-samples", type=int, default=128)
    r.add_argument("--gt", action="store_true", help="render 4x ground truth with AO")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--print-config", action="store_true")
    r.set_defaults(fn=cmd_render)

    d = sub.add_parser("gen-dataset", help="render a training dataset")
    d.add_argument("--config", default=None)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.add_argument("--verbose", action="store_true")
    d.add_argument("--print-config", action="store_true")
    d.set_defaults(fn=cmd_gen_dataset)

    t = sub.add_parser("train", help="train the super-resolution network")
    t.add_argument("--config", default=None)
    t.add_argument("--data", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--verbose", action="store_true")
    t.add_argument("--print-config", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="PSNR against interpolation baselines")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--shading", default=None)
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="run the recurrent pipeline over a camera path")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--vol", required=True)
    i.add_argument("--path", required=True, help="camera.json")
    i.add_argument("--frames", type=int, default=None)
    i.add_argument("--res", type=int, default=64)
    i.add_argument("--iso", type=float, default=None)
    i.add_argument("--out", required=True)
    i.add_argument("--print-config", action="store_true")
    i.set_defaults(fn=cmd_infer)

    s = sub.add_parser("serve", help="interactive streaming service")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--vol", required=True)
    s.add_argument("--port", type=int, default=8650)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--res", type=int, default=64)
    s.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    _apply_thread_env()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except IsosrError as e:
        print(f"isosr: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"isosr: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
