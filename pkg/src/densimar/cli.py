"""Command-line front end: ``densimar simulate|reconstruct|baseline|evaluate|default-config``.

Exit codes: 0 success, 2 usage or configuration error, 3 inconsistent
inputs (e.g. spectrum digest mismatch), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import InterpolationError, fbp, li_mar
from .field import HashEncoderConfig, MlpConfig, write_checkpoint
from .forward import MaterialContext
from .geometry import SamplingConfig, ScanGeometry
from .grid import GridSpec, MetalMask, read_dimg, write_dimg, write_pgm
from .metrics import dumps, report
from .reconstruct import render_density, render_lac_stack, render_monochromatic, to_hu
from .simulate import (MATERIAL_DENSITY, Ellipse, NoiseConfig, Polygon, ground_truth_lac, make_phantom,
                       project_poly)
from .sinogram import read_dsin, write_dsin
from .spectrum import (EnergyRangeError, TableFormatError, bundled_mac, bundled_spectrum, load_mac,
                       load_spectrum, resample_spectrum, save_spectrum)
from .trainer import TrainConfig, TrainingDiverged, estimate_metal_mask, train, write_loss_history

log = logging.getLogger("densimar")

EXIT_OK, EXIT_USAGE, EXIT_CONSISTENCY, EXIT_NUMERIC = 0, 2, 3, 4

STARVATION_NOTE = (
    "photon starvation: some detector bins received no photons and were clamped to one count; "
    "their measurements carry no information about the attenuation behind the metal, so "
    "reconstructions near dense metal remain unreliable")
LINEAR_NOTE = "linear regime: a single-bin spectrum makes the forward model a plain line integral"

DEFAULT_CONFIG = """\
# densimar run configuration (key = value, '#' starts a comment)

[geometry]
source_to_center = 362.0
center_to_detector = 362.0
n_views = 360
angular_range = 360.0
n_detectors = 368
detector_spacing = 2.0
# half width (mm) of the square field of view; empty = half the phantom extent
fov_half_width =
# ray sampling step (mm) used to simulate measurements
delta_x = 0.5

[phantom]
# body | shepp_logan | disk | empty
kind = body
height = 256
width = 256
pixel_size = 1.0
metal_material = titanium
# empty = handbook density of metal_material (g/cm^3)
metal_density =
# shapes separated by ';':  ellipse cx cy a b [angle_deg]  |  polygon x1 y1 x2 y2 x3 y3 ...
metal_shapes = ellipse 30 10 8 6 20; ellipse -35 -15 6 6

[spectrum]
# bundled spectrum name or path to a two-column CSV
source = tungsten_120kvp
# resample to this many bins over [e_min, e_max] keV; 0 keeps the source bins
bins = 0
e_min = 20
e_max = 120

[noise]
poisson = true
incident_photons = 2e7
pve_subsamples = 5
seed = 0

[train]
rays_per_iter = 80
epochs = 2000
lr0 = 1e-3
lr_halving_period = 500
seed = 0
delta_x = 0.5
n_levels = 16
table_size = 524288
features_per_entry = 8
base_resolution = 2
growth_factor = 2.0
hidden_width = 128
# spectrum bins used by the model; 0 = the measured spectrum as given
spectrum_bins = 0
"""


class UsageError(Exception):
    """Bad command line or configuration; exit code 2."""


class ConsistencyError(Exception):
    """Inputs that do not belong together; exit code 3."""


# ---------------------------------------------------------------- config


class RunConfig:
    """Parsed configuration with line-aware error messages."""

    def __init__(self, path: str | None = None):
        self.path = path
        self.parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        self.parser.read_string(DEFAULT_CONFIG)
        self.lines: dict[tuple[str, str], int] = {}
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise UsageError(f"cannot read config {path}: {exc}") from None
            try:
                self.parser.read_string(text, source=str(path))
            except configparser.Error as exc:
                raise UsageError(f"{path}: {exc}") from None
            self._index_lines(text)
            self._check_keys()

    def _index_lines(self, text):
        section = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
            elif "=" in line and section is not None:
                self.lines[(section, line.split("=", 1)[0].strip().lower())] = lineno

    def _where(self, section, key):
        lineno = self.lines.get((section, key))
        src = self.path or "<defaults>"
        return f"{src}:{lineno}: [{section}] {key}" if lineno else f"{src}: [{section}] {key}"

    def _check_keys(self):
        defaults = configparser.ConfigParser(inline_comment_prefixes=("#",))
        defaults.read_string(DEFAULT_CONFIG)
        for section in self.parser.sections():
            if not defaults.has_section(section):
                raise UsageError(f"{self.path}: unknown section [{section}]")
            for key in self.parser[section]:
                if not defaults.has_option(section, key):
                    raise UsageError(f"{self._where(section, key)}: unknown key")

    def raw(self, section, key) -> str:
        return self.parser.get(section, key).strip()

    def get(self, section, key, kind=float, optional=False):
        text = self.raw(section, key)
        if optional and text == "":
            return None
        try:
            if kind is bool:
                return self.parser.getboolean(section, key)
            if kind is int:
                value = float(text)
                if value != int(value):
                    raise ValueError
                return int(value)
            return kind(text)
        except ValueError:
            raise UsageError(f"{self._where(section, key)}: invalid {kind.__name__} {text!r}") from None

    def field_error(self, section, key, message):
        return UsageError(f"{self._where(section, key)}: {message}")

    def echo(self) -> dict:
        return {s: dict(self.parser[s]) for s in self.parser.sections()}


def parse_shapes(text: str):
    shapes = []
    for item in filter(None, (part.strip() for part in text.split(";"))):
        kind, *nums = item.split()
        values = [float(v) for v in nums]
        if kind == "ellipse" and len(values) in (4, 5):
            shapes.append(Ellipse(*values))
        elif kind == "polygon" and len(values) >= 6 and len(values) % 2 == 0:
            shapes.append(Polygon(tuple(zip(values[::2], values[1::2]))))
        else:
            raise ValueError(f"cannot parse metal shape {item!r}")
    return shapes


def _guard(cfg: RunConfig, section, key, fn):
    try:
        return fn()
    except (ValueError, KeyError, TableFormatError, OSError) as exc:
        raise cfg.field_error(section, key, str(exc)) from None


def phantom_from_config(cfg: RunConfig):
    kind = cfg.raw("phantom", "kind")
    height, width = cfg.get("phantom", "height", int), cfg.get("phantom", "width", int)
    pixel_size = cfg.get("phantom", "pixel_size")
    material = cfg.raw("phantom", "metal_material")
    if material not in MATERIAL_DENSITY or material == "water":
        raise cfg.field_error("phantom", "metal_material", f"unknown metal {material!r}")
    density = cfg.get("phantom", "metal_density", optional=True)
    shapes = _guard(cfg, "phantom", "metal_shapes", lambda: parse_shapes(cfg.raw("phantom", "metal_shapes")))
    return _guard(cfg, "phantom", "kind", lambda: make_phantom(kind, (height, width), pixel_size, shapes,
                                                                 material, density))


def geometry_from_config(cfg: RunConfig, default_fov: float) -> ScanGeometry:
    fov = cfg.get("geometry", "fov_half_width", optional=True)
    keys = ["source_to_center", "center_to_detector", "n_views", "angular_range", "n_detectors",
            "detector_spacing"]
    kinds = [float, float, int, float, int, float]
    values = {k: cfg.get("geometry", k, t) for k, t in zip(keys, kinds)}
    return _guard(cfg, "geometry", "n_views",
                  lambda: ScanGeometry(**values, fov_half_width=default_fov if fov is None else fov))


def _load_spectrum_source(source: str):
    if Path(source).suffix == "" and not Path(source).exists():
        return bundled_spectrum(source)
    return load_spectrum(source)


def spectrum_from_config(cfg: RunConfig):
    source = cfg.raw("spectrum", "source")
    try:
        spectrum = _load_spectrum_source(source)
    except (OSError, TableFormatError, ValueError) as exc:
        raise cfg.field_error("spectrum", "source", str(exc)) from None
    bins = cfg.get("spectrum", "bins", int)
    if bins < 0:
        raise cfg.field_error("spectrum", "bins", "must be >= 0")
    if bins:
        lo, hi = cfg.get("spectrum", "e_min"), cfg.get("spectrum", "e_max")
        spectrum = _guard(cfg, "spectrum", "bins", lambda: resample_spectrum(spectrum, bins, lo, hi))
    return spectrum


def noise_from_config(cfg: RunConfig) -> NoiseConfig:
    return _guard(cfg, "noise", "incident_photons", lambda: NoiseConfig(
        incident_photons=cfg.get("noise", "incident_photons"),
        enable_poisson=cfg.get("noise", "poisson", bool),
        pve_subsamples=cfg.get("noise", "pve_subsamples", int),
        seed=cfg.get("noise", "seed", int)))


def train_from_config(cfg: RunConfig, args) -> TrainConfig:
    def pick(key, kind, override):
        return cfg.get("train", key, kind) if override is None else override

    def build():
        encoder = HashEncoderConfig(cfg.get("train", "n_levels", int), cfg.get("train", "table_size", int),
                                    cfg.get("train", "features_per_entry", int),
                                    cfg.get("train", "base_resolution", int), cfg.get("train", "growth_factor"))
        return TrainConfig(rays_per_iter=cfg.get("train", "rays_per_iter", int),
                           epochs=pick("epochs", int, args.epochs),
                           lr0=pick("lr0", float, args.lr0),
                           lr_halving_period=cfg.get("train", "lr_halving_period", int),
                           seed=pick("seed", int, args.seed),
                           encoder=encoder, mlp=MlpConfig(cfg.get("train", "hidden_width", int)),
                           delta_x=cfg.get("train", "delta_x"))
    return _guard(cfg, "train", "epochs", build)


# ---------------------------------------------------------------- helpers


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, manifest: dict, outputs: list[str]) -> None:
    manifest["outputs"] = {name: file_sha256(out / name) for name in sorted(outputs)}
    manifest["version"] = __version__
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _write_image(out: Path, stem: str, grid, outputs: list, lo=None, hi=None) -> None:
    write_dimg(out / f"{stem}.dimg", grid)
    values = np.asarray(grid.values, dtype=np.float64)
    lo = float(values.min()) if lo is None else lo
    hi = float(values.max()) if hi is None else hi
    write_pgm(out / f"{stem}.pgm", values, lo, hi if hi > lo else lo + 1.0)
    outputs += [f"{stem}.dimg", f"{stem}.pgm"]


def _window(args) -> dict:
    """PGM grey-level window from ``--pgm-window``; defaults to [0, image max]."""
    if getattr(args, "pgm_window", None) is None:
        return {"lo": 0.0}
    lo, hi = args.pgm_window
    if not hi > lo:
        raise UsageError("--pgm-window needs LO < HI")
    return {"lo": lo, "hi": hi}


def _mac_tables(mac_dir, metal: str):
    if mac_dir is None:
        return bundled_mac("water"), bundled_mac(metal)
    d = Path(mac_dir)
    return load_mac(d / "water.csv", "water"), load_mac(d / f"{metal}.csv", metal)


def _spectrum_edges(spectrum):
    e = spectrum.energies
    if e.size < 2:
        raise UsageError("cannot resample a single-bin spectrum; give --e-min/--e-max explicitly")
    return e[0] - 0.5 * (e[1] - e[0]), e[-1] + 0.5 * (e[-1] - e[-2])


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = RunConfig(args.config)
    phantom = phantom_from_config(cfg)
    spec = phantom.spec
    geom = geometry_from_config(cfg, max(spec.half_extent))
    spectrum = spectrum_from_config(cfg)
    noise = noise_from_config(cfg)
    delta_x = cfg.get("geometry", "delta_x")
    sampling = _guard(cfg, "geometry", "delta_x", lambda: SamplingConfig(delta_x))
    ctx = MaterialContext(spectrum, bundled_mac("water"), bundled_mac(phantom.metal_material))
    log.info("simulating %d x %d sinogram (%d spectrum bins)", geom.n_views, geom.n_detectors, spectrum.n_bins)
    sino = project_poly(phantom, geom, sampling, spectrum, ctx, noise, threads=args.threads)

    out = _out_dir(args.out_dir)
    outputs = ["sinogram.dsin", "spectrum.csv"]
    write_dsin(out / "sinogram.dsin", sino)
    save_spectrum(spectrum, out / "spectrum.csv")
    _write_image(out, "gt_density", phantom.density, outputs, lo=0.0)
    gt_lac = ground_truth_lac(phantom, ctx, ctx.equivalent_energy)
    _write_image(out, "gt_lac", gt_lac, outputs, **_window(args))
    _write_image(out, "mask", phantom.mask, outputs, lo=0.0, hi=1.0)

    clamped = int(sino.clamped.sum()) if sino.clamped is not None else 0
    manifest = {
        "command": "simulate",
        "config": cfg.echo(),
        "config_file": args.config,
        "seed": noise.seed,
        "spectrum_sha256": spectrum.sha256().hex(),
        "spectrum_bins": spectrum.n_bins,
        "equivalent_energy_kev": ctx.equivalent_energy,
        "mask_pixel_count": phantom.mask.n_metal,
        "clamped_bins": clamped,
        "clamped_fraction": clamped / sino.values.size,
        "linear_regime": spectrum.n_bins == 1,
        "limitations": [],
    }
    if spectrum.n_bins == 1:
        manifest["limitations"].append(LINEAR_NOTE)
    if clamped:
        manifest["limitations"].append(STARVATION_NOTE)
    _write_manifest(out, manifest, outputs)
    print(f"wrote {out / 'sinogram.dsin'} ({clamped} clamped bins, E* = {ctx.equivalent_energy} keV)")
    return EXIT_OK


def _image_spec(args, cfg: RunConfig, mask, sino) -> GridSpec:
    if args.size is not None:
        return GridSpec(args.size[0], args.size[1], args.pixel_size or 1.0)
    if mask is not None:
        return mask.spec
    if args.config is not None:
        return GridSpec(cfg.get("phantom", "height", int), cfg.get("phantom", "width", int),
                        cfg.get("phantom", "pixel_size"))
    pixel = args.pixel_size or 1.0
    n = int(round(2 * sino.geometry.fov_half_width / pixel))
    return GridSpec(n, n, pixel)


def _read_mask(path) -> MetalMask:
    try:
        return read_dimg(path, "mask")
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read mask {path}: {exc}") from None


def cmd_reconstruct(args) -> int:
    cfg = RunConfig(args.config)
    sino = read_dsin(args.sinogram)
    spectrum = _load_spectrum_source(args.spectrum)
    if spectrum.sha256() != sino.spectrum_sha256 and not args.allow_spectrum_mismatch:
        print(f"error: spectrum digest mismatch\n  sinogram: {sino.spectrum_sha256.hex()}\n"
              f"  spectrum: {spectrum.sha256().hex()}\n(pass --allow-spectrum-mismatch to override)",
              file=sys.stderr)
        return EXIT_CONSISTENCY
    metal = args.metal or cfg.raw("phantom", "metal_material")
    water, metal_table = _mac_tables(args.mac_dir, metal)

    bins = args.spectrum_bins if args.spectrum_bins is not None else cfg.get("train", "spectrum_bins", int)
    if bins:
        lo, hi = _spectrum_edges(spectrum) if args.e_min is None else (args.e_min, args.e_max)
        spectrum = resample_spectrum(spectrum, bins, lo, hi)
    ctx = MaterialContext(spectrum, water, metal_table)
    tcfg = train_from_config(cfg, args)

    mask = _read_mask(args.mask) if args.mask else None
    spec = _image_spec(args, cfg, mask, sino)
    if mask is not None and mask.spec != spec:
        raise ConsistencyError(f"mask grid {mask.spec} differs from the image grid {spec}")
    mask_source = args.mask or "estimated"
    if mask is None:
        mask = estimate_metal_mask(fbp(sino, spec), ctx)

    out = _out_dir(args.out_dir)
    outputs = []
    ckpt_dir = out / "checkpoints"

    def on_epoch(epoch, state):
        if args.checkpoint_every and (epoch + 1) % args.checkpoint_every == 0:
            ckpt_dir.mkdir(exist_ok=True)
            name = f"epoch_{epoch + 1:05d}.dnrf"
            write_checkpoint(ckpt_dir / name, state.params, sino.geometry.fov_half_width)
            outputs.append(f"checkpoints/{name}")

    log.info("training %d epochs on %d rays, %d spectrum bins", tcfg.epochs, sino.values.size, spectrum.n_bins)
    state = train(sino, mask, ctx, tcfg, callback=on_epoch)
    half_width = sino.geometry.fov_half_width
    density = render_density(state.params, spec, half_width)
    mono = render_monochromatic(density, mask, ctx)
    _write_image(out, "density", density, outputs, lo=0.0)
    _write_image(out, "lac_mono", mono, outputs, **_window(args))
    _write_image(out, "mask_used", mask, outputs, lo=0.0, hi=1.0)
    if args.hu:
        hu = to_hu(mono, ctx)
        write_pgm(out / "hu_mono.pgm", hu, -1000.0, 1000.0)
        np.save(out / "hu_mono.npy", hu.astype(np.float32))
        outputs += ["hu_mono.pgm", "hu_mono.npy"]
    if args.stack:
        (out / "lac_stack").mkdir(exist_ok=True)
        for img in render_lac_stack(density, mask, ctx):
            name = f"lac_stack/lac_{img.energy:07.2f}kev.dimg"
            write_dimg(out / name, img)
            outputs.append(name)
    write_loss_history(out / "loss.csv", state.history)
    write_checkpoint(out / "field.dnrf", state.params, half_width)
    outputs += ["loss.csv", "field.dnrf"]

    clamped = _clamped_bins(sino, args.incident_photons, cfg)
    manifest = {
        "command": "reconstruct",
        "argv": _argv_echo(args),
        "config": cfg.echo(),
        "sinogram_sha256": file_sha256(args.sinogram),
        "spectrum_sha256": spectrum.sha256().hex(),
        "spectrum_bins": spectrum.n_bins,
        "equivalent_energy_kev": ctx.equivalent_energy,
        "metal_material": metal,
        "mask_source": mask_source,
        "mask_pixel_count": mask.n_metal,
        "train": asdict(tcfg),
        "iterations": state.iteration,
        "final_loss": state.history[-1].loss if state.history else None,
        "clamped_bins": clamped,
        "linear_regime": spectrum.n_bins == 1,
        "limitations": ([LINEAR_NOTE] if spectrum.n_bins == 1 else []) + ([STARVATION_NOTE] if clamped else []),
    }
    if args.gt:
        manifest["metrics"] = _evaluate_against(mono, args.gt, mask)
        (out / "metrics.json").write_text(dumps(manifest["metrics"]) + "\n")
        outputs.append("metrics.json")
    _write_manifest(out, manifest, outputs)
    print(f"trained {state.iteration} iterations; images in {out}")
    return EXIT_OK


def _clamped_bins(sino, incident_photons, cfg: RunConfig) -> int:
    """Bins at the one-photon ceiling ``ln(I0)`` of the measurement."""
    i0 = incident_photons if incident_photons is not None else cfg.get("noise", "incident_photons")
    ceiling = math.log(i0)
    return int((sino.values >= ceiling - 1e-4).sum())


def _argv_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out_dir")}


def _evaluate_against(image, gt_path, mask) -> dict:
    gt = read_dimg(gt_path)
    if gt.values.shape != image.values.shape:
        raise UsageError(f"ground truth shape {gt.values.shape} differs from image {image.values.shape}")
    return report(image, gt, mask if mask is not None and mask.n_metal else None)


def cmd_baseline(args) -> int:
    cfg = RunConfig(args.config)
    sino = read_dsin(args.sinogram)
    if args.method == "li" and not args.mask:
        raise UsageError("the li method needs --mask")
    mask = _read_mask(args.mask) if args.mask else None
    spec = _image_spec(args, cfg, mask, sino)
    if mask is not None and mask.spec != spec:
        raise ConsistencyError(f"mask grid {mask.spec} differs from the image grid {spec}")
    window = None if args.window == "ram-lak" else args.window
    if args.method == "fbp":
        image = fbp(sino, spec, window)
    else:
        image = li_mar(sino, mask, spec, SamplingConfig(args.delta_x), window)
    out = _out_dir(args.out_dir)
    outputs = []
    _write_image(out, args.method, image, outputs, **_window(args))
    manifest = {"command": "baseline", "argv": _argv_echo(args), "sinogram_sha256": file_sha256(args.sinogram)}
    if args.gt:
        manifest["metrics"] = _evaluate_against(image, args.gt, mask)
        (out / "metrics.json").write_text(dumps(manifest["metrics"]) + "\n")
        outputs.append("metrics.json")
        print(dumps(manifest["metrics"]))
    _write_manifest(out, manifest, outputs)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        recon, gt = read_dimg(args.recon), read_dimg(args.gt)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if recon.values.shape != gt.values.shape:
        raise UsageError(f"image shapes differ: {recon.values.shape} vs {gt.values.shape}")
    mask = None
    if args.mask:
        mask = _read_mask(args.mask)
        if mask.values.shape != gt.values.shape:
            raise UsageError(f"mask shape {mask.values.shape} differs from the images")
    text = dumps(report(recon, gt, mask))
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_default_config(args) -> int:
    if args.out:
        Path(args.out).write_text(DEFAULT_CONFIG)
    else:
        sys.stdout.write(DEFAULT_CONFIG)
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="densimar", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"densimar {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a phantom scan from a config file")
    s.add_argument("config")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--pgm-window", type=float, nargs=2, metavar=("LO", "HI"),
                   help="grey-level window (1/cm) for the LAC PGM preview")
    s.set_defaults(func=cmd_simulate)

    def grid_flags(q):
        q.add_argument("--config", help="run config supplying defaults (image grid, train settings)")
        q.add_argument("--size", type=int, nargs=2, metavar=("H", "W"), help="output image size")
        q.add_argument("--pixel-size", type=float, help="output pixel size in mm")
        q.add_argument("--mask", help="metal mask DIMG file")
        q.add_argument("--gt", help="ground-truth DIMG; writes metrics.json")
        q.add_argument("--out-dir", required=True)
        q.add_argument("--threads", type=int, default=1)
        q.add_argument("--pgm-window", type=float, nargs=2, metavar=("LO", "HI"),
                       help="grey-level window (1/cm) for the LAC PGM preview")

    r = sub.add_parser("reconstruct", help="fit the density field to a sinogram")
    r.add_argument("sinogram")
    r.add_argument("--spectrum", required=True, help="spectrum CSV or bundled name")
    r.add_argument("--mac-dir", help="directory with water.csv and <metal>.csv (default: bundled tables)")
    r.add_argument("--metal", help="metal material name (default: config [phantom] metal_material)")
    r.add_argument("--spectrum-bins", type=int, help="resample the spectrum to N bins for the model")
    r.add_argument("--e-min", type=float)
    r.add_argument("--e-max", type=float)
    r.add_argument("--allow-spectrum-mismatch", action="store_true")
    r.add_argument("--epochs", type=int)
    r.add_argument("--lr0", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--checkpoint-every", type=int, default=0, metavar="K")
    r.add_argument("--incident-photons", type=float, help="I0 used to detect clamped bins")
    r.add_argument("--stack", action="store_true", help="also write the LAC image at every spectrum bin")
    r.add_argument("--hu", action="store_true", help="also export the monochromatic image in HU")
    grid_flags(r)
    r.set_defaults(func=cmd_reconstruct)

    b = sub.add_parser("baseline", help="FBP or linear-interpolation MAR")
    b.add_argument("sinogram")
    b.add_argument("--method", choices=("fbp", "li"), default="fbp")
    b.add_argument("--window", choices=("ram-lak", "hann"), default="ram-lak")
    b.add_argument("--delta-x", type=float, default=0.5, help="sampling step for the metal trace (mm)")
    grid_flags(b)
    b.set_defaults(func=cmd_baseline)

    e = sub.add_parser("evaluate", help="PSNR/SSIM of a reconstruction against ground truth")
    e.add_argument("recon")
    e.add_argument("gt")
    e.add_argument("--mask")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("default-config", help="print the default run configuration")
    d.add_argument("--out")
    d.set_defaults(func=cmd_default_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    if getattr(args, "e_min", None) is not None and getattr(args, "e_max", None) is None:
        parser.error("--e-min requires --e-max")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConsistencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EnergyRangeError, InterpolationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
