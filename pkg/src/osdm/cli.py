"""Command-line front end.

Configuration is a flat ``key = value`` text file (``#`` starts a comment);
``--set key=value`` overrides single keys. Unknown keys are rejected. Every
command writes its outputs to ``--out`` (default: the current directory).

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger("osdm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    kind: type
    default: object
    unit: str
    help: str


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float(text) -> float:
    return float(text)  # accepts "inf"


KEYS: dict[str, Key] = {
    "seed": Key(int, 0, "-", "seed for noise simulation, training and sampling (--seed overrides)"),
    "geometry.source_to_center": Key(float, 40.0, "cm", "source to rotation axis"),
    "geometry.detector_to_center": Key(float, 40.0, "cm", "rotation axis to detector"),
    "geometry.detector_width": Key(float, 41.3, "cm", "flat detector length"),
    "geometry.n_detectors": Key(int, 180, "count", "detector elements"),
    "geometry.n_views": Key(int, 180, "count", "views over a full rotation"),
    "image.width": Key(int, 128, "px", "image columns"),
    "image.height": Key(int, 128, "px", "image rows"),
    "image.pixel_size": Key(float, 0.16, "cm", "pixel edge length"),
    "phantom.kind": Key(str, "head", "-", "head | symmetric-head | disk | ellipses | file | empty"),
    "phantom.ellipses": Key(str, "", "cm, 1/cm, deg",
                            "ellipses 'value,a,b,x0,y0,deg; ...' for kind=ellipses"),
    "phantom.disk_radius": Key(float, 5.0, "cm", "disk radius for kind=disk"),
    "phantom.disk_value": Key(float, 0.2, "1/cm", "disk attenuation for kind=disk"),
    "phantom.blur": Key(float, 1.0, "px", "Gaussian smoothing of head phantoms (0 = sharp)"),
    "phantom.mirror": Key(_bool, False, "bool", "mirror the phantom left to right"),
    "phantom.file": Key(str, "", "path", "array file of attenuation values for kind=file"),
    "photon.source_intensity": Key(_float, 1e5, "counts/ray", "I0; 'inf' gives noiseless y = x"),
    "photon.background": Key(float, 0.0, "counts/ray", "background counts r"),
    "photon.eta": Key(float, 22000.0, "-", "calibration scale: sinogram = eta * line integral"),
    "schedule.sigma_min": Key(float, 0.01, "normalized", "smallest noise level"),
    "schedule.sigma_max": Key(float, 1.0, "normalized", "largest noise level"),
    "schedule.n_levels": Key(int, 1000, "count", "training noise levels"),
    "train.n_iters": Key(int, 2000, "count", "optimizer steps"),
    "train.batch_size": Key(int, 16, "count", "patches per step"),
    "train.learning_rate": Key(float, 1e-3, "-", "Adam learning rate"),
    "train.ema_decay": Key(float, 0.999, "-", "EMA decay of the saved weights"),
    "train.features": Key(int, 32, "count", "hidden channels of the score network"),
    "train.window": Key(int, 8, "px", "Hankel window size a"),
    "train.dataset": Key(str, "hankel", "-", "hankel | delta (a single constant patch)"),
    "train.delta_value": Key(float, 0.5, "normalized", "patch value for dataset=delta"),
    "train.delta_size": Key(int, 16, "px", "patch edge for dataset=delta"),
    "train.resume": Key(str, "", "path", "checkpoint to continue from"),
    "recon.outer_steps": Key(int, 200, "count", "outer iterations N"),
    "recon.inner_steps": Key(int, 1, "count", "corrector iterations M per outer step"),
    "recon.rank": Key(int, 38, "count", "singular values kept by the low-rank step"),
    "recon.tv_step": Key(float, 0.1, "normalized", "TV step alpha, relative to the consistency change"),
    "recon.pwls_mu": Key(float, 3.0e4, "1/normalized^2", "prior precision of the PWLS blend"),
    "recon.corrector_snr": Key(float, 0.08, "-", "Langevin signal-to-noise ratio"),
    "recon.enable_diffusion": Key(_bool, True, "bool", "predictor and corrector moves"),
    "recon.enable_lr": Key(_bool, True, "bool", "Hankel low-rank step"),
    "recon.enable_tv": Key(_bool, True, "bool", "TV step"),
    "recon.enable_pwls": Key(_bool, True, "bool", "PWLS blend with the measurement"),
    "recon.tile_batch": Key(int, 64, "count", "Hankel tiles per network call"),
    "filter.kind": Key(str, "ramp", "-", "FBP filter: ramp | hann"),
    "filter.cutoff": Key(float, 1.0, "fraction of Nyquist", "FBP filter cutoff"),
    "baseline.method": Key(str, "fbp", "-", "fbp | sart-tv | both"),
    "sart.n_iters": Key(int, 20, "count", "SART-TV iterations"),
    "sart.relaxation": Key(float, 1.0, "-", "SART relaxation in (0, 2)"),
    "sart.tv_steps": Key(int, 10, "count", "TV descent steps per iteration"),
    "sart.tv_step_size": Key(float, 0.2, "-", "TV step relative to the SART change"),
    "display.mu_water": Key(float, 0.2, "1/cm", "water attenuation for the HU mapping"),
    "display.window_lo": Key(float, -250.0, "HU", "value mapped to black"),
    "display.window_hi": Key(float, 600.0, "HU", "value mapped to white"),
    "input.image": Key(str, "", "path", "attenuation image (project, simulate; default: phantom.*)"),
    "input.sinogram": Key(str, "", "path", "sinogram (train: normal dose; reconstruct, baseline: low dose)"),
    "input.weights": Key(str, "", "path", "PWLS weights (default: derived from y and photon.*)"),
    "input.checkpoint": Key(str, "", "path", "score model checkpoint"),
    "input.reference": Key(str, "", "path", "reference image for eval and the PSNR trace"),
}


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines into raw strings, rejecting unknown or repeated keys."""
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        raw[key] = value
    return raw


def resolve(raw: dict) -> dict:
    """Typed values for every key, defaults filled in."""
    cfg = {}
    for key, spec in KEYS.items():
        if key not in raw:
            cfg[key] = spec.default
            continue
        try:
            cfg[key] = spec.kind(raw[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return cfg


def load_config(path: str | None, overrides: list[str] = (), seed: int | None = None) -> dict:
    raw = {}
    if path:
        try:
            raw = parse_config(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = value
    if seed is not None:
        raw["seed"] = str(seed)
    return resolve(raw)


def keys_help() -> str:
    width = max(map(len, KEYS))
    lines = ["configuration keys (key [unit] default: description):"]
    for key, spec in KEYS.items():
        lines.append(f"  {key:<{width}}  [{spec.unit}] {spec.default!r}: {spec.help}")
    return "\n".join(lines)


# ---- builders -------------------------------------------------------------------

def geometry(cfg):
    from .geometry import FanBeamGeometry
    return FanBeamGeometry(cfg["geometry.source_to_center"], cfg["geometry.detector_to_center"],
                           cfg["geometry.detector_width"], cfg["geometry.n_detectors"],
                           cfg["geometry.n_views"])


def grid(cfg):
    return cfg["image.width"], cfg["image.height"], cfg["image.pixel_size"]


def parse_ellipses(text: str):
    from .geometry import Ellipse, EllipsePhantom
    ellipses = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        parts = [float(v) for v in item.split(",")]
        if len(parts) != 6:
            raise ConfigError(f"ellipse needs value,a,b,x0,y0,deg: {item!r}")
        v, a, b, x0, y0, deg = parts
        ellipses.append(Ellipse((x0, y0), (a, b), math.radians(deg), v))
    return EllipsePhantom(ellipses)


def build_phantom(cfg):
    from . import geometry as g
    w, h, s = grid(cfg)
    kind = cfg["phantom.kind"]
    if kind == "file":
        return g.ImageGrid(_load(cfg["phantom.file"], "phantom.file").astype(np.float64), s)
    if kind == "head":
        return g.desk_phantom(w, h, s, cfg["phantom.blur"], cfg["phantom.mirror"])
    if kind == "symmetric-head":
        spec = g.head_phantom(symmetric=True)
    elif kind == "disk":
        spec = g.disk_phantom(cfg["phantom.disk_radius"], cfg["phantom.disk_value"])
    elif kind == "ellipses":
        spec = parse_ellipses(cfg["phantom.ellipses"])
    elif kind == "empty":
        spec = g.EllipsePhantom()
    else:
        raise ConfigError(f"unknown phantom.kind {kind!r}")
    if cfg["phantom.mirror"]:
        spec = spec.mirrored()
    return g.make_phantom(spec, w, h, s)


def photon_model(cfg):
    from .lowdose import PhotonModel
    return PhotonModel(cfg["photon.source_intensity"], cfg["photon.background"],
                       cfg["photon.eta"], cfg["seed"])


def recon_config(cfg):
    from .sampler import ReconConfig
    return ReconConfig(
        outer_steps=cfg["recon.outer_steps"], inner_steps=cfg["recon.inner_steps"],
        rank=cfg["recon.rank"], window=cfg["train.window"], tv_step=cfg["recon.tv_step"],
        pwls_mu=cfg["recon.pwls_mu"], eta=cfg["photon.eta"], corrector_snr=cfg["recon.corrector_snr"],
        enable_diffusion=cfg["recon.enable_diffusion"], enable_lr=cfg["recon.enable_lr"],
        enable_tv=cfg["recon.enable_tv"], enable_pwls=cfg["recon.enable_pwls"],
        rng_seed=cfg["seed"], tile_batch=cfg["recon.tile_batch"], filter=filter_spec(cfg))


def filter_spec(cfg):
    from .analytic import FilterSpec
    return FilterSpec(cfg["filter.kind"], cfg["filter.cutoff"])


def _load(path: str, key: str) -> np.ndarray:
    from .io import load_array
    if not path:
        raise ConfigError(f"{key} is required")
    try:
        return load_array(path)
    except FileNotFoundError:
        raise ConfigError(f"{key}: no such file {path}") from None


def _save(out: Path, name: str, arr) -> Path:
    from .io import save_array
    path = out / name
    save_array(path, arr)
    log.info("wrote %s", path)
    return path


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    log.info("wrote %s", path)


def _sinogram(cfg, key="input.sinogram"):
    from .geometry import Sinogram
    return Sinogram(_load(cfg[key], key).astype(np.float64), cfg["photon.eta"])


# ---- commands -------------------------------------------------------------------

def cmd_phantom(cfg, out: Path, args):
    _save(out, "phantom.osdm", build_phantom(cfg).values)


def _image(cfg):
    from .geometry import ImageGrid
    if cfg["input.image"]:
        return ImageGrid(_load(cfg["input.image"], "input.image").astype(np.float64), cfg["image.pixel_size"])
    return build_phantom(cfg)


def cmd_project(cfg, out: Path, args):
    from .projector import forward_project
    sino = forward_project(_image(cfg), geometry(cfg)).rescaled(cfg["photon.eta"])
    _save(out, "sinogram.osdm", sino.values)


def cmd_simulate(cfg, out: Path, args):
    from .lowdose import simulate_lowdose
    from .projector import forward_project
    x = forward_project(_image(cfg), geometry(cfg)).rescaled(cfg["photon.eta"])
    _save(out, "clean.osdm", x.values)
    if math.isinf(cfg["photon.source_intensity"]):
        counts = np.full(x.values.shape, np.inf)
        y, w = x.values, np.full(x.values.shape, np.inf)
    else:
        counts, ysino, w = simulate_lowdose(x, photon_model(cfg))
        y = ysino.values
    _save(out, "counts.osdm", counts)
    _save(out, "lowdose.osdm", y)
    _save(out, "weights.osdm", w)


def cmd_train(cfg, out: Path, args):
    from .hankel import hankel_transform, split_patches
    from .score import ScoreModel, SigmaSchedule, TrainConfig, train

    tcfg = TrainConfig(cfg["train.n_iters"], cfg["train.batch_size"], cfg["train.learning_rate"],
                       cfg["seed"], cfg["train.ema_decay"], cfg["train.features"])
    schedule = SigmaSchedule(cfg["schedule.sigma_min"], cfg["schedule.sigma_max"], cfg["schedule.n_levels"])
    resume = None
    if cfg["train.resume"]:
        try:
            resume = ScoreModel.load(cfg["train.resume"])
        except FileNotFoundError:
            raise ConfigError(f"train.resume: no such file {cfg['train.resume']}") from None
    window = cfg["train.window"]
    if cfg["train.dataset"] == "delta":
        n = cfg["train.delta_size"]
        patches, norm = np.full((1, n, n), cfg["train.delta_value"]), 1.0
    elif cfg["train.dataset"] == "hankel":
        x = _sinogram(cfg).values
        norm = float(np.max(np.abs(x))) or 1.0
        patches = split_patches(hankel_transform(x / norm, window), seed=cfg["seed"]).patches
    else:
        raise ConfigError(f"unknown train.dataset {cfg['train.dataset']!r}")
    model = train(patches, tcfg, schedule, resume=resume, normalization=norm, window=window)
    model.save(out / "model.ckpt")
    start = model.step - len(model.losses)
    _write_csv(out / "loss.csv", ["iteration", "loss"],
               [(start + i, repr(v)) for i, v in enumerate(model.losses)])


def _weights(cfg, y):
    from .lowdose import pwls_weights
    if cfg["input.weights"]:
        return _load(cfg["input.weights"], "input.weights").astype(np.float64)
    if math.isinf(cfg["photon.source_intensity"]):
        raise ConfigError("PWLS weights need a finite photon.source_intensity or input.weights")
    return pwls_weights(y, photon_model(cfg))


def cmd_reconstruct(cfg, out: Path, args):
    from .geometry import ImageGrid
    from .sampler import reconstruct
    from .score import ScoreModel

    rc = recon_config(cfg)
    y = _sinogram(cfg)
    model = None
    if cfg["input.checkpoint"]:
        try:
            model = ScoreModel.load(cfg["input.checkpoint"])
        except FileNotFoundError:
            raise ConfigError(f"input.checkpoint: no such file {cfg['input.checkpoint']}") from None
    elif rc.enable_diffusion:
        raise ConfigError("recon.enable_diffusion needs input.checkpoint")
    weights = _weights(cfg, y) if rc.enable_pwls else None
    ref = None
    if cfg["input.reference"]:
        ref = ImageGrid(_load(cfg["input.reference"], "input.reference").astype(np.float64),
                        cfg["image.pixel_size"])
    res = reconstruct(y, model, geometry(cfg), grid(cfg), rc, weights=weights, reference=ref)
    _save(out, "recon_sinogram.osdm", res.sinogram.values)
    _save(out, "recon_image.osdm", res.image.values)
    cols = ["step", "sigma", "fidelity", "tv"] + (["psnr"] if ref is not None else [])
    _write_csv(out / "trace.csv", cols, [[repr(row[c]) if c != "step" else row[c] for c in cols]
                                         for row in res.trace])


def cmd_baseline(cfg, out: Path, args):
    from .analytic import fbp, sart_tv
    method = cfg["baseline.method"]
    if method not in ("fbp", "sart-tv", "both"):
        raise ConfigError(f"unknown baseline.method {method!r}")
    y, geom, (w, h, s) = _sinogram(cfg), geometry(cfg), grid(cfg)
    if method in ("fbp", "both"):
        _save(out, "fbp.osdm", fbp(y, geom, w, h, s, filter_spec(cfg)).values)
    if method in ("sart-tv", "both"):
        hist = []
        img = sart_tv(y, geom, w, h, s, cfg["sart.n_iters"], cfg["sart.relaxation"],
                      cfg["sart.tv_steps"], cfg["sart.tv_step_size"], history=hist)
        _save(out, "sart_tv.osdm", img.values)
        _write_csv(out / "sart_residual.csv", ["iteration", "residual"],
                   [(i, repr(v)) for i, v in enumerate(hist)])


def cmd_eval(cfg, out: Path, args):
    from .metrics import report
    ref_path = args.reference or cfg["input.reference"]
    ref = _load(ref_path, "input.reference").astype(np.float64)
    if not args.tests:
        raise ConfigError("eval needs at least one test image")
    rows = []
    for path in args.tests:
        r = report(_load(path, "test image").astype(np.float64), ref)
        rows.append((Path(path).stem, f"{r.psnr:.6f}", f"{r.ssim:.6f}", f"{r.mse:.6e}"))
    header = ["image", "psnr", "ssim", "mse"]
    _write_csv(out / "metrics.csv", header, rows)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


def to_hu(mu, mu_water: float) -> np.ndarray:
    return 1000.0 * (np.asarray(mu, dtype=np.float64) - mu_water) / mu_water


def window_to_uint8(values, lo: float, hi: float) -> np.ndarray:
    """Linear map of ``[lo, hi]`` to ``[0, 255]`` with clamping."""
    if not hi > lo:
        raise ConfigError("display window needs hi > lo")
    scaled = (np.asarray(values, dtype=np.float64) - lo) / (hi - lo) * 255.0
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def cmd_export_png(cfg, out: Path, args):
    from PIL import Image
    path = args.array or cfg["input.image"]
    arr = _load(path, "input.image")
    if arr.ndim != 2:
        raise ConfigError("export-png needs a 2D array")
    hu = to_hu(arr, cfg["display.mu_water"])
    png = out / (Path(path).stem + ".png")
    Image.fromarray(window_to_uint8(hu, cfg["display.window_lo"], cfg["display.window_hi"]), "L").save(png)
    log.info("wrote %s", png)


COMMANDS = {
    "phantom": (cmd_phantom, "render the configured phantom"),
    "project": (cmd_project, "forward project an image (calibrated by photon.eta)"),
    "simulate": (cmd_simulate, "clean sinogram, photon counts, low-dose sinogram and weights"),
    "train": (cmd_train, "train the score model on one normal-dose sinogram"),
    "reconstruct": (cmd_reconstruct, "restore a low-dose sinogram and reconstruct it"),
    "baseline": (cmd_baseline, "FBP and/or SART-TV reconstruction"),
    "eval": (cmd_eval, "PSNR, SSIM and MSE of test images against a reference"),
    "export-png": (cmd_export_png, "HU-windowed 8-bit PNG of an image"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key")
    common.add_argument("--seed", type=int, help="global seed (overrides the seed key)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads for numpy and torch; 1 gives bit-reproducible output")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="osdm", description=__doc__.split("\n")[0],
                                epilog=keys_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=text, description=text, epilog=keys_help(),
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "eval":
            sp.add_argument("reference", nargs="?", help="reference image (default input.reference)")
            sp.add_argument("tests", nargs="*", help="test images")
        if name == "export-png":
            sp.add_argument("array", nargs="?", help="image array file (default input.image)")
    return p


def _limit_threads(n: int | None):
    if n is None:
        return None
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    import torch
    from threadpoolctl import threadpool_limits
    torch.set_num_threads(n)
    return threadpool_limits(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    from .io import FormatError
    from .sampler import NumericalFailure
    from .score import TrainingDiverged
    try:
        cfg = load_config(args.config, args.set, args.seed)
        limiter = _limit_threads(args.threads)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        try:
            COMMANDS[args.command][0](cfg, out, args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except (NumericalFailure, TrainingDiverged, FloatingPointError) as exc:
        print(f"osdm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FormatError, ValueError, OSError) as exc:
        print(f"osdm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
