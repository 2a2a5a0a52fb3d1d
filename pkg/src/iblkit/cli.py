"""Command-line entry point: ``iblkit <command> ...``.

Exit codes: 0 success, 1 validation failure, 2 usage or I/O error.
"""

import argparse
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import io
from .camera import Camera
from .field import load_checkpoint, save_checkpoint
from .lut import compute_lut, default_lut, load_lut, save_lut
from .shade import edit_frame, render_view, shade_forward
from .train import train

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
COMPONENTS = ("albedo", "roughness", "irradiance", "prefiltered", "normal")


class UsageError(Exception):
    pass


def _size(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}") from exc
    return w, h


def _write(out, name, image, png=True):
    out.mkdir(parents=True, exist_ok=True)
    img = np.asarray(image, dtype=np.float32)
    io.write_pfm(out / f"{name}.pfm", img)
    if png:
        disp = img if name != "normal" else 0.5 * (img + 1.0) * (np.abs(img).sum(-1, keepdims=True) > 0)
        io.export_png(out / f"{name}.png", disp)


# ---------------------------------------------------------------------------
# checkpoint context

def _load_model(path):
    params, meta = load_checkpoint(path)
    run = meta.get("run_config")
    cfg = io.parse_config(run).train if run else io.parse_config({}).train
    return params, cfg


def _camera_from_args(args, frameset=None):
    if args.pose is not None:
        pose = args.pose
        if Path(pose).exists():
            doc = yaml.safe_load(Path(pose).read_text())
            near = doc.get("near", frameset.near if frameset else 0.05)
            far = doc.get("far", frameset.far if frameset else 3.0)
            return Camera(doc["c2w"], doc["focal"], doc["width"], doc["height"], near, far)
        vals = [float(v) for v in pose.split(",")]
        if len(vals) != 16:
            raise UsageError("--pose takes a camera file or 16 comma-separated numbers")
        if frameset is not None:
            ref = frameset.camera(0)
            return Camera(np.reshape(vals, (4, 4)), ref.focal, ref.width, ref.height, ref.near, ref.far)
        w, h = args.size
        return Camera(np.reshape(vals, (4, 4)), 0.5 * w / np.tan(np.radians(30)), w, h, 0.05, 3.0)
    if frameset is None:
        raise UsageError("need --data with --camera-index, or --pose")
    idx = args.camera_index or 0
    if not 0 <= idx < len(frameset.frames):
        raise UsageError(f"camera index {idx} outside 0..{len(frameset.frames) - 1}")
    return frameset.camera(idx)


def _lut(args):
    return load_lut(args.lut) if getattr(args, "lut", None) else default_lut()


# ---------------------------------------------------------------------------
# commands

def cmd_lut(args):
    lut = compute_lut(args.res, args.samples, args.seed, args.sampler)
    save_lut(lut, args.out)
    print(f"wrote {args.res}x{args.res} LUT ({args.samples} samples/cell) to {args.out}")
    return EXIT_OK


def cmd_scenegen(args):
    scene = io.load_scene(args.scene)
    w, h = args.size
    fs = io.scenegen(scene, args.out, args.views, args.test_views, w, h, args.spp, args.seed,
                     args.prior_noise, progress=lambda k, n: print(f"rendered view {k + 1}/{n}"))
    print(f"wrote {len(fs.frames)} frames to {Path(args.out) / 'manifest.yaml'}")
    return EXIT_OK


def _rescale(schedule, steps):
    """Shrink or stretch the schedule to ``steps``, keeping the phase proportions."""
    if steps == 0:
        return replace(schedule, total_steps=0)
    s = schedule
    p1 = max(1, round(steps * s.phase1_end / s.total_steps))
    p2 = max(p1 + 1, round(steps * s.phase2_end / s.total_steps))
    if steps <= p2:
        raise UsageError(f"--steps {steps} is too short for three phases")
    return replace(s, total_steps=steps, phase1_end=p1, phase2_end=p2)


def cmd_train(args):
    fs = io.load_manifest(args.data)
    run = io.load_config(args.config) if args.config else io.default_run_config(fs)
    if args.steps is not None:
        run = replace(run, train=replace(run.train, schedule=_rescale(run.train.schedule, args.steps)))
    cfg = run.train
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"run_config": io.config_to_dict(run)}
    (out / "config.yaml").write_text(yaml.safe_dump(meta["run_config"], sort_keys=False))
    res = train(fs.views(), fs.prior_images(), cfg, _lut(args), out, metadata=meta,
                callback=_progress(cfg.schedule.total_steps))
    save_checkpoint(res.params, out / "final.ckpt", dict(meta, step=res.step))
    print(f"trained {res.step} steps; checkpoint {out / 'final.ckpt'}")
    return EXIT_OK


def _progress(total):
    def cb(rec):
        if rec["step"] % 100 == 0 or rec["step"] == total - 1:
            parts = " ".join(f"{k}={v:.4g}" for k, v in rec["parts"].items())
            print(f"step {rec['step']} phase {rec['phase']} {parts}", flush=True)
    return cb


def _render(args, params, cfg, camera):
    frame, buffers, counter = render_view(params, camera, _lut(args), cfg.spec, cfg.render, args.seed)
    return frame, buffers, counter


def cmd_render(args):
    params, cfg = _load_model(args.ckpt)
    fs = io.load_manifest(args.data) if args.data else None
    cam = _camera_from_args(args, fs)
    frame, _, counter = _render(args, params, cfg, cam)
    out = Path(args.out)
    _write(out, "beauty", frame["beauty"])
    names = [a for a in (args.aovs.split(",") if args.aovs else []) if a]
    for name in names:
        if name not in frame:
            raise UsageError(f"unknown AOV {name!r}; available: {sorted(frame)}")
        _write(out, name, frame[name].astype(np.float32))
    print(f"rendered {cam.width}x{cam.height}; field evaluations {counter.shading} (+{counter.normal} for normals)")
    return EXIT_OK


def decompose_view(params, cfg, camera, lut, seed=None):
    """Intrinsic components for one camera, keyed by component name."""
    frame, b, _ = render_view(params, camera, lut, cfg.spec, cfg.render, seed)
    h, w = camera.height, camera.width
    pref = np.zeros((len(b.hit), 3))
    idx = np.flatnonzero(b.hit)
    if len(idx):
        cos_o = np.sum(b.normal[idx] * b.omega_o[idx], axis=-1)
        _, _, aux = shade_forward(b.albedo[idx], b.irradiance[idx], b.roughness[idx], cos_o, b.pref[idx],
                                  b.d_reflect[idx], b.escaped[idx], lut, cfg.spec,
                                  cfg.render.metallic_from_roughness)
        pref[idx] = aux["reflected"]
    comps = {"albedo": frame["albedo"], "roughness": frame["roughness"],
             "irradiance": frame["irradiance"], "prefiltered": pref.reshape(h, w, 3),
             "normal": frame["normal"]}
    extra = {k: frame[k] for k in ("beauty", "diffuse", "specular")}
    return comps, extra


def cmd_decompose(args):
    params, cfg = _load_model(args.ckpt)
    fs = io.load_manifest(args.data)
    lut = _lut(args)
    idx = fs.indices("test") or fs.indices("train")
    for i in idx:
        comps, extra = decompose_view(params, cfg, fs.camera(i), lut, args.seed)
        out = Path(args.out) / f"view_{i:03d}"
        for name, img in {**comps, **extra}.items():
            _write(out, name, img)
        tiles = [_tile(comps[n], n) for n in COMPONENTS] + [_tile(extra["beauty"], "beauty")]
        io.export_png(out / "grid.png", np.concatenate(tiles, axis=1))
    print(f"decomposed {len(idx)} views into {args.out}")
    return EXIT_OK


def _tile(img, name):
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    if name == "normal":
        img = 0.5 * (img + 1.0) * (np.abs(img).sum(-1, keepdims=True) > 0)
    return img


def cmd_edit(args):
    params, cfg = _load_model(args.ckpt)
    fs = io.load_manifest(args.data) if args.data else None
    cam = _camera_from_args(args, fs)
    edits = io.load_edits(args.edits)
    frame, buffers, _ = _render(args, params, cfg, cam)
    beauty = frame["beauty"]
    if not edits.empty:
        beauty = edit_frame(buffers, beauty, edits, cam, params, _lut(args), cfg.spec, cfg.render,
                            args.seed).reshape(cam.height, cam.width, 3)
    _write(Path(args.out), "beauty", beauty)
    print(f"applied {len(edits.regions)} region and {len(edits.objects)} object edits")
    return EXIT_OK


def cmd_validate(args):
    from .validate import SUITES, run_suite
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        print(f"[{name}]")
        for check in run_suite(name):
            print("  " + check.line())
            ok &= check.ok
    print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser

def build_parser():
    p = argparse.ArgumentParser(prog="iblkit", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="cap numerical worker threads (default: $IBLKIT_THREADS)")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded math for bit-reproducible runs")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("lut", help="precompute the BRDF integration table")
    s.add_argument("--res", type=int, default=64)
    s.add_argument("--samples", type=int, default=2**14)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sampler", choices=("vndf", "ndf"), default="vndf")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_lut)

    s = sub.add_parser("scenegen", help="render a posed dataset with ground-truth AOVs and priors")
    s.add_argument("--scene", default="box", help="scene file, or 'box' for the toy room")
    s.add_argument("--views", type=int, default=20, help="training views")
    s.add_argument("--test-views", type=int, default=5)
    s.add_argument("--size", type=_size, default=(64, 64))
    s.add_argument("--spp", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--prior-noise", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scenegen)

    s = sub.add_parser("train", help="fit a field to a dataset")
    s.add_argument("--data", required=True, help="manifest.yaml")
    s.add_argument("--config", default=None)
    s.add_argument("--steps", type=int, default=None, help="override train.steps, phases scaled")
    s.add_argument("--lut", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    for name, func, help_ in (("render", cmd_render, "render beauty and AOVs"),
                              ("edit", cmd_edit, "render with material edits and inserted objects")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--ckpt", required=True)
        s.add_argument("--data", default=None, help="manifest for --camera-index")
        s.add_argument("--camera-index", type=int, default=None)
        s.add_argument("--pose", default=None, help="camera file or 16 comma-separated c2w numbers")
        s.add_argument("--size", type=_size, default=(64, 64))
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--lut", default=None)
        s.add_argument("--out", required=True)
        if name == "render":
            s.add_argument("--aovs", default="", help="comma-separated AOV names")
        else:
            s.add_argument("--edits", required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("decompose", help="intrinsic components for every test view")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--lut", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("validate", help="run a self-check suite")
    s.add_argument("--suite", required=True,
                   choices=("brdf", "lut", "kernel", "volume", "splitsum", "gradients", "counters", "adaptive",
                            "all"))
    s.set_defaults(func=cmd_validate)
    return p


def _thread_cap(args):
    if args.deterministic:
        return 1
    if args.threads is not None:
        return args.threads
    env = os.environ.get("IBLKIT_THREADS")
    return int(env) if env else None


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cap = _thread_cap(args)
    except ValueError:
        print("error: IBLKIT_THREADS must be an integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=cap) if cap else nullcontext():
            return args.func(args)
    except (UsageError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
