"""File formats: PFM images, PNG export, manifests, run configs, scene and edit files.

Everything on disk is linear radiance except PNG exports, which are
gamma-encoded for display.
"""

import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .camera import Camera, look_at
from .field import FieldConfig
from .mc import box_scene, render_reference, scene_from_dict, scene_to_dict
from .prefilter import PrefilterSpec
from .shade import EditSpec, InsertedObject, Region, RenderSettings
from .train import (LossWeights, PriorImages, Schedule, TrainConfig, TrainView,
                    priors_from_aovs)


class PfmError(ValueError):
    pass


class ManifestError(ValueError):
    pass


class MissingImageError(ManifestError, FileNotFoundError):
    pass


class RotationError(ManifestError):
    pass


class DepthRangeError(ManifestError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# images

def write_pfm(path, image):
    """Little-endian PFM (scale -1.0), rows stored bottom to top."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise PfmError(f"PFM holds (H, W) or (H, W, 3) images, got {img.shape}")
    if np.isnan(img).any():
        raise ValueError("refusing to write NaN pixels")
    h, w = img.shape[:2]
    tag = b"PF" if img.ndim == 3 else b"Pf"
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(np.ascontiguousarray(img[::-1], dtype="<f4").tobytes())


def read_pfm(path):
    data = Path(path).read_bytes()
    lines = data.split(b"\n", 3)
    if len(lines) < 4 or lines[0] not in (b"PF", b"Pf"):
        raise PfmError(f"{path}: not a PFM file")
    m = re.fullmatch(rb"\s*(\d+)\s+(\d+)\s*", lines[1])
    if m is None:
        raise PfmError(f"{path}: malformed size line")
    w, h = int(m.group(1)), int(m.group(2))
    try:
        scale = float(lines[2])
    except ValueError as exc:
        raise PfmError(f"{path}: malformed scale line") from exc
    if scale == 0.0:
        raise PfmError(f"{path}: zero scale")
    channels = 3 if lines[0] == b"PF" else 1
    count = w * h * channels
    dtype = "<f4" if scale < 0 else ">f4"
    if len(lines[3]) != 4 * count:
        raise PfmError(f"{path}: expected {count} floats, found {len(lines[3]) // 4}")
    img = np.frombuffer(lines[3], dtype=dtype, count=count).astype(np.float32)
    img = img.reshape((h, w, 3) if channels == 3 else (h, w))
    return img[::-1].copy()


read_image, write_image = read_pfm, write_pfm


def to_display(image):
    """Clamp to [0, 1] and apply the 1/2.2 display gamma."""
    return np.clip(np.asarray(image, dtype=float), 0.0, 1.0) ** (1.0 / 2.2)


def export_png(path, image):
    img = np.asarray(image, dtype=float)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    px = np.round(255.0 * to_display(img)).astype(np.uint8)
    Image.fromarray(px).save(path)
    return px


def psnr(a, b, peak=1.0):
    mse = float(np.mean((np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(peak * peak / mse)


# ---------------------------------------------------------------------------
# manifests

@dataclass
class Frame:
    image: str
    c2w: np.ndarray
    focal: float
    width: int
    height: int
    split: str = "train"
    priors: dict = field(default_factory=dict)
    aovs: dict = field(default_factory=dict)


@dataclass
class FrameSet:
    """Posed frames sharing one near/far range; paths are relative to ``root``."""

    frames: list
    near: float
    far: float
    root: Path = Path(".")
    background: float = 0.0
    spec_d0: float = None

    def camera(self, i):
        f = self.frames[i]
        return Camera(f.c2w, f.focal, f.width, f.height, self.near, self.far)

    def indices(self, split):
        return [i for i, f in enumerate(self.frames) if f.split == split]

    def path(self, rel):
        return Path(self.root) / rel

    def image(self, i):
        return read_pfm(self.path(self.frames[i].image))

    def views(self, split="train"):
        return [TrainView(self.camera(i), self.image(i)) for i in self.indices(split)]

    def aov(self, i, name):
        return read_pfm(self.path(self.frames[i].aovs[name]))

    def prior_images(self, split="train"):
        idx = self.indices(split)
        if not all("albedo" in self.frames[i].priors for i in idx):
            return None
        alb = [read_pfm(self.path(self.frames[i].priors["albedo"])) for i in idx]
        irr = [read_pfm(self.path(self.frames[i].priors["irradiance"])) for i in idx]
        return PriorImages(alb, irr)


def _check_rotation(c2w):
    rot = np.asarray(c2w, dtype=float)[:3, :3]
    if np.abs(rot.T @ rot - np.eye(3)).max() >= 1e-4:
        raise RotationError("non-orthonormal camera rotation")


def load_manifest(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest {path} does not exist")
    doc = yaml.safe_load(path.read_text())
    root = path.parent
    near, far = float(doc["near"]), float(doc["far"])
    if not near < far:
        raise DepthRangeError(f"near {near} must be < far {far}")
    frames = []
    for entry in doc.get("frames", []):
        c2w = np.asarray(entry["c2w"], dtype=float).reshape(4, 4)
        _check_rotation(c2w)
        image = entry["image"]
        if not (root / image).exists():
            raise MissingImageError(f"missing image file {image}")
        frames.append(Frame(image, c2w, float(entry["focal"]), int(entry["width"]),
                            int(entry["height"]), entry.get("split", "train"),
                            dict(entry.get("priors", {})), dict(entry.get("aovs", {}))))
    return FrameSet(frames, near, far, root, float(doc.get("background", 0.0)), doc.get("d0"))


def save_manifest(frameset, path):
    doc = {"near": frameset.near, "far": frameset.far, "background": frameset.background,
           "frames": []}
    if frameset.spec_d0 is not None:
        doc["d0"] = frameset.spec_d0
    for f in frameset.frames:
        entry = {"image": f.image, "split": f.split, "c2w": np.asarray(f.c2w).tolist(),
                 "focal": f.focal, "width": f.width, "height": f.height}
        if f.priors:
            entry["priors"] = dict(f.priors)
        if f.aovs:
            entry["aovs"] = dict(f.aovs)
        doc["frames"].append(entry)
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


# ---------------------------------------------------------------------------
# run configuration

_TRAIN_KEYS = {"steps": "total_steps", "phase1_end": "phase1_end", "phase2_end": "phase2_end",
               "batch_rays": "batch_rays", "lr": "lr", "lr_final": "lr_final"}
_MC_KEYS = {"spp", "n_dirs", "seed"}


@dataclass
class RunConfig:
    train: TrainConfig
    mc: dict
    seed: int = 0
    output_dir: str = None


def _dataclass_kwargs(cls, section, name, rename=None):
    known = {f.name for f in fields(cls)}
    rename = rename or {}
    out = {}
    for k, v in section.items():
        key = rename.get(k, k)
        if key not in known:
            raise ConfigError(f"unknown config key {name}.{k}")
        out[key] = tuple(v) if isinstance(v, list) else v
    return out


def parse_config(doc):
    """Build a :class:`RunConfig` from a nested mapping; unknown keys are rejected."""
    doc = dict(doc or {})
    top = {"prefilter", "train", "shade", "field", "mc", "seed", "output_dir"}
    for k in doc:
        if k not in top:
            raise ConfigError(f"unknown config key {k}")
    seed = int(doc.get("seed", 0))
    tr = dict(doc.get("train") or {})
    sched_kw, weight_kw, extra = {}, {}, {}
    for k, v in tr.items():
        if k in _TRAIN_KEYS:
            sched_kw[_TRAIN_KEYS[k]] = v
        elif k == "lambda_ireg":
            weight_kw["lambda_ireg"] = float(v)
        elif k == "prior_weight":
            weight_kw["prior"] = float(v)
        elif k in ("seed", "deterministic"):
            extra[k] = v
        else:
            raise ConfigError(f"unknown config key train.{k}")
    try:
        cfg = TrainConfig(
            schedule=Schedule(**sched_kw),
            weights=LossWeights(**weight_kw),
            network=FieldConfig(**_dataclass_kwargs(FieldConfig, doc.get("field") or {}, "field")),
            render=RenderSettings(**_dataclass_kwargs(RenderSettings, doc.get("shade") or {}, "shade")),
            spec=PrefilterSpec(**_dataclass_kwargs(PrefilterSpec, doc.get("prefilter") or {},
                                                   "prefilter")),
            seed=int(extra.get("seed", seed)),
            deterministic=bool(extra.get("deterministic", True)),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    mc = dict(doc.get("mc") or {})
    for k in mc:
        if k not in _MC_KEYS:
            raise ConfigError(f"unknown config key mc.{k}")
    return RunConfig(cfg, mc, seed, doc.get("output_dir"))


def load_config(path):
    return parse_config(yaml.safe_load(Path(path).read_text()) if path else {})


def config_to_dict(run):
    cfg = run.train
    s = cfg.schedule
    return {
        "seed": run.seed,
        "train": {"steps": s.total_steps, "phase1_end": s.phase1_end, "phase2_end": s.phase2_end,
                  "batch_rays": s.batch_rays, "lr": s.lr, "lr_final": s.lr_final,
                  "lambda_ireg": cfg.weights.lambda_ireg, "prior_weight": cfg.weights.prior,
                  "seed": cfg.seed, "deterministic": cfg.deterministic},
        "field": asdict(cfg.network),
        "shade": asdict(cfg.render),
        "prefilter": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg.spec).items()},
        "mc": dict(run.mc),
    }


# ---------------------------------------------------------------------------
# scene and edit files

def load_scene(path):
    """A scene file, or the built-in toy room for the name ``box``."""
    if str(path) == "box":
        return box_scene()
    return scene_from_dict(yaml.safe_load(Path(path).read_text()))


def save_scene(scene, path):
    Path(path).write_text(yaml.safe_dump(scene_to_dict(scene), sort_keys=False))


_REGION_KEYS = {"box_min", "box_max", "mask_path", "set_albedo", "set_roughness"}
_OBJECT_KEYS = {"sdf", "albedo", "roughness", "alpha"}


def parse_edits(doc, root=Path(".")):
    """``{"edits": [{"region": {...}} | {"object": {...}}]}``; an empty document is no edit."""
    entries = (doc or {}).get("edits") or [] if isinstance(doc, dict) or doc is None else doc
    regions, objects = [], []
    for entry in entries:
        if not isinstance(entry, dict) or len(entry) != 1:
            raise ConfigError(f"edit entries hold exactly one of region/object: {entry!r}")
        (kind, body), = entry.items()
        body = dict(body)
        if kind == "region":
            bad = set(body) - _REGION_KEYS
            if bad:
                raise ConfigError(f"unknown region keys {sorted(bad)}")
            mask = None
            if "mask_path" in body:
                mask = read_pfm(Path(root) / body["mask_path"]) > 0.5
            regions.append(Region(body.get("box_min"), body.get("box_max"), mask,
                                  body.get("set_albedo"), body.get("set_roughness")))
        elif kind == "object":
            bad = set(body) - _OBJECT_KEYS
            if bad:
                raise ConfigError(f"unknown object keys {sorted(bad)}")
            sdf = dict(body["sdf"])
            objects.append(InsertedObject(sdf.pop("type"), sdf.pop("center"),
                                          float(sdf.pop("radius", 0.0)),
                                          np.asarray(sdf.pop("extent"), dtype=float)
                                          if "extent" in sdf else None,
                                          body.get("albedo", (0.5, 0.5, 0.5)),
                                          float(body.get("roughness", 0.5)),
                                          float(body.get("alpha", 0.0))))
            if sdf:
                raise ConfigError(f"unknown sdf keys {sorted(sdf)}")
        else:
            raise ConfigError(f"unknown edit kind {kind!r}")
    return EditSpec(regions, objects)


def load_edits(path):
    text = Path(path).read_text()
    return parse_edits(yaml.safe_load(text) if text.strip() else None, Path(path).parent)


# ---------------------------------------------------------------------------
# synthetic datasets

def sample_cameras(n, seed, width, height, fov_deg=60.0, near=0.05, far=3.0):
    """Cameras inside the toy room, in front of the objects, looking toward the back wall."""
    rng = np.random.default_rng(seed)
    focal = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
    cams = []
    for _ in range(n):
        eye = rng.uniform([-0.55, -0.45, 0.35], [0.55, 0.45, 0.8])
        target = rng.uniform([-0.3, -0.7, -0.5], [0.3, -0.2, 0.0])
        cams.append(Camera(look_at(eye, target), focal, width, height, near, far))
    return cams


AOV_NAMES = ("albedo", "roughness", "irradiance", "normal", "depth")


def scenegen(scene, out_dir, n_train=20, n_test=5, width=64, height=64, spp=64, seed=0,
             prior_noise=0.0, fov_deg=60.0, near=0.05, far=3.0, progress=None):
    """Render a posed dataset with ground-truth AOVs and pseudo priors; returns the FrameSet."""
    out = Path(out_dir)
    for sub in ("frames", "aovs", "priors"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    cams = sample_cameras(n_train, seed, width, height, fov_deg, near, far)
    cams += sample_cameras(n_test, seed + 10_000, width, height, fov_deg, near, far)
    frames, gt_albedo, gt_irr = [], [], []
    for k, cam in enumerate(cams):
        split = "train" if k < n_train else "test"
        name = f"{split}_{k if split == 'train' else k - n_train:03d}"
        r = render_reference(scene, cam, spp=spp, seed=seed * 1_000_003 + k)
        write_pfm(out / "frames" / f"{name}.pfm", r["beauty"])
        aovs = {}
        for a in AOV_NAMES:
            rel = f"aovs/{name}_{a}.pfm"
            write_pfm(out / rel, r[a])
            aovs[a] = rel
        frame = Frame(f"frames/{name}.pfm", cam.c2w, cam.focal, width, height, split, {}, aovs)
        if split == "train":
            gt_albedo.append(r["albedo"])
            gt_irr.append(r["irradiance"])
        frames.append(frame)
        if progress is not None:
            progress(k, len(cams))
    priors = priors_from_aovs(gt_albedo, gt_irr, prior_noise, seed)
    for k in range(n_train):
        for a, img in (("albedo", priors.albedo[k]), ("irradiance", priors.irradiance[k])):
            rel = f"priors/train_{k:03d}_{a}.pfm"
            write_pfm(out / rel, img)
            frames[k].priors[a] = rel
    bg = float(np.mean(scene.background))
    fs = FrameSet(frames, near, far, out, bg, 0.5 * (near + far))
    save_manifest(fs, out / "manifest.yaml")
    return fs


TOY_NETWORK = FieldConfig(pos_layers=4, pos_width=64, skip=2, dir_width=32, pos_freqs=6, dir_freqs=2)


def default_run_config(frameset=None, **train_overrides):
    """Desk-scale defaults: the toy network, 256-ray batches, and the dataset's background and d0."""
    run = parse_config({})
    cfg = run.train
    render, spec = cfg.render, cfg.spec
    if frameset is not None:
        render = replace(render, background=frameset.background)
        spec = replace(spec, d0=frameset.spec_d0 or 0.5 * (frameset.near + frameset.far))
    cfg = replace(cfg, network=TOY_NETWORK, render=render, spec=spec,
                  schedule=replace(cfg.schedule, batch_rays=256))
    return replace(run, train=replace(cfg, **train_overrides))
