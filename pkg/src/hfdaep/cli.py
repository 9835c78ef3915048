"""Command-line driver: phantom synthesis, masks, training and reconstruction.

Every command takes ``--config <file>`` (flat ``key = value`` text), ``--seed``,
``--out`` and ``--deterministic``; command-line flags win over the file.
Each run writes ``manifest.json`` into ``--out`` with the fully resolved
configuration, the keys that had no effect on this run (``no_op``), the
files written and any preview display windows.

Errors exit nonzero with one line on stderr::

    hfdaep: error: <ExceptionType>: <message>
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ct import (
    CtReconConfig,
    FanGeometry,
    NoiseModel,
    Sinogram,
    add_ct_noise,
    fbp,
    reconstruct_ct,
    siddon_project,
)
from .dae import TrainConfig, dae_train, identity_model, load_model, save_model, zero_model
from .io import load_tensor, read_config, save_preview, save_tensor
from .metrics import MetricReport, report
from .mri import (
    MriReconConfig,
    SamplingMask,
    KSpaceData,
    add_kspace_noise,
    adjoint,
    encode,
    make_mask,
    reconstruct_mri,
)
from .phantoms import PhantomSpec, make_phantoms
from .prior import PriorContext
from .transform import AlphaProfile, forward_transform

log = logging.getLogger("hfdaep")

DEFAULT_ALPHAS = "1000,800,400,50"

COMMON = {"seed": (int, 0), "out": (str, None), "deterministic": (bool, True)}

PRIOR_KEYS = {
    "model": (str, None),
    "alphas": (str, DEFAULT_ALPHAS),
    "gradients": (bool, False),
    "precision": (str, "float32"),
}

SCHEMA = {
    "gen-data": {
        "kind": (str, "random_ellipses"),
        "size": (int, 128),
        "count": (int, 10),
        "intensity_min": (float, 0.0),
        "intensity_max": (float, 1.0),
    },
    "make-mask": {
        "kind": (str, "random2d"),
        "R": (float, 5.0),
        "height": (int, 128),
        "width": (int, 128),
    },
    "train": {
        "data": (str, None),
        "domain": (str, "mri"),
        "alphas": (str, DEFAULT_ALPHAS),
        "gradients": (bool, False),
        "sigma": (float, 25.0),
        "patch_size": (int, 40),
        "batch_size": (int, 64),
        "epochs": (int, 10),
        "learning_rate": (float, 1e-3),
        "patches_per_image": (int, 4),
        "depth": (int, 5),
        "features": (int, 32),
        "precision": (str, "float32"),
    },
    "recon-mri": {
        "truth": (str, None),
        "kspace": (str, None),
        "mask": (str, None),
        "mask_kind": (str, "random2d"),
        "R": (float, 5.0),
        **PRIOR_KEYS,
        "lam": (float, 0.1),
        "iterations": (int, 100),
        "noise_sigma": (float, 0.0),
    },
    "recon-ct": {
        "truth": (str, None),
        "sinogram": (str, None),
        "geometry": (str, None),
        "views": (int, 64),
        "bins": (int, 512),
        **PRIOR_KEYS,
        "lam": (float, 100.0),
        "iterations": (int, 100),
        "weighting": (str, "unweighted"),
        "noise": (bool, False),
        "f": (float, 1e-5),
        "T": (float, 2.0),
    },
    "metrics": {"input": (str, None), "reference": (str, None)},
}

HELP = {
    "gen-data": "write synthetic phantoms as HFDP files",
    "make-mask": "write a k-space sampling mask",
    "train": "train the denoising autoencoder on a phantom directory",
    "recon-mri": "undersampled MRI reconstruction",
    "recon-ct": "sparse-view fan-beam CT reconstruction",
    "metrics": "PSNR/SSIM/HFEN of an image against a reference",
}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _to_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise CliError(f"not a boolean: {text!r}")


def _convert(key, typ, raw):
    if raw is None:
        return None
    if typ is bool:
        return _to_bool(raw)
    try:
        return typ(raw)
    except ValueError as exc:
        raise CliError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hfdaep", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd, keys in SCHEMA.items():
        p = sub.add_parser(cmd, help=HELP[cmd])
        p.add_argument("--config", default=None, help="key = value file; flags override it")
        for key, (typ, default) in {**COMMON, **keys}.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, dest=key, default=None, action=argparse.BooleanOptionalAction)
            else:
                p.add_argument(flag, dest=key, default=None, help=f"default: {default}")
    return parser


def resolve(cmd: str, args: argparse.Namespace) -> dict:
    """Merge schema defaults, the config file and explicit flags (in that order)."""
    schema = {**COMMON, **SCHEMA[cmd]}
    cfg = {k: d for k, (_, d) in schema.items()}
    if args.config:
        for key, raw in read_config(args.config).items():
            if key not in schema:
                raise CliError(f"unknown config key {key!r} for {cmd}")
            cfg[key] = _convert(key, schema[key][0], raw)
    for key, (typ, _) in schema.items():
        raw = getattr(args, key)
        if raw is not None:
            cfg[key] = _convert(key, typ, raw)
    if not cfg["out"]:
        raise CliError("--out is required")
    return cfg


# helpers -------------------------------------------------------------------

def _need(cfg, key):
    if not cfg.get(key):
        raise CliError(f"--{key.replace('_', '-')} is required")
    return cfg[key]


def _prior(run: "_Run", cfg: dict, is_complex: bool) -> PriorContext:
    """Prior context from ``--model`` (a model file, ``identity`` or ``zero``)."""
    profile = AlphaProfile.parse(cfg["alphas"])
    want = (len(profile) + (2 if cfg["gradients"] else 0)) * (2 if is_complex else 1)
    spec = _need(cfg, "model")
    if spec == "identity":
        model = identity_model(want)
        run.unused("alphas", "gradients", "precision")
    elif spec == "zero":
        model = zero_model(want)
    else:
        model = load_model(spec)
    if model.in_channels != want:
        raise ValueError(f"model has {model.in_channels} input channels, the alpha "
                         f"profile and domain need {want}")
    return PriorContext(model, profile, cfg["gradients"], cfg["precision"])


def _write_trace(path: Path, trace: list[dict]) -> None:
    cols = [c for c in ("iteration", "delta", "psnr", "ssim", "hfen") if c in trace[0]]
    rows = [",".join(cols)]
    for row in trace:
        rows.append(",".join(str(row["iteration"]) if c == "iteration" else f"{row[c]:.9g}"
                             for c in cols))
    path.write_text("\n".join(rows) + "\n")


def _write_metrics(path: Path, named: dict[str, MetricReport]) -> None:
    lines = ["method," + MetricReport.csv_header()]
    lines += [f"{name},{rep.csv_row()}" for name, rep in named.items()]
    path.write_text("\n".join(lines) + "\n")


class _Run:
    """Collects outputs, preview windows and no-op keys for the manifest."""

    def __init__(self, cmd, cfg):
        self.cmd, self.cfg = cmd, cfg
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.windows: dict[str, list[float]] = {}
        self.no_op = {"out"}

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def preview(self, name: str, img) -> None:
        lo, hi = save_preview(self.path(name), img)
        self.windows[name] = [lo, hi]

    def unused(self, *keys) -> None:
        self.no_op.update(keys)

    def manifest(self) -> dict:
        return {
            "command": self.cmd,
            "version": __version__,
            "config": self.cfg,
            "seeds": {"seed": self.cfg["seed"]},
            "no_op": sorted(self.no_op),
            "outputs": self.files,
            "preview_windows": self.windows,
        }


# commands ------------------------------------------------------------------

def cmd_gen_data(run: _Run, cfg: dict) -> None:
    spec = PhantomSpec(cfg["kind"], cfg["size"], cfg["count"], cfg["seed"],
                       (cfg["intensity_min"], cfg["intensity_max"]))
    if spec.kind == "shepp_logan":
        run.unused("seed", "intensity_min", "intensity_max")
    for i, img in enumerate(make_phantoms(spec)):
        save_tensor(run.path(f"phantom_{i:04d}.hfdp"), img)
    run.unused("deterministic")


def cmd_make_mask(run: _Run, cfg: dict) -> None:
    mask = make_mask(cfg["kind"], cfg["R"], cfg["height"], cfg["width"], cfg["seed"])
    if cfg["kind"] == "radial" or cfg["R"] == 1:
        run.unused("seed")
    save_tensor(run.path("mask.hfdp"), mask.kept.astype(np.float64))
    run.path("mask.txt").write_text(
        f"{mask.header()} height={cfg['height']} width={cfg['width']} "
        f"fraction={mask.fraction:.6f}\n")
    run.preview("mask.png", np.fft.fftshift(mask.kept.astype(float)))
    run.unused("deterministic")


def _read_mask_header(path: Path) -> dict:
    side = path.with_suffix(".txt")
    if not side.exists():
        return {}
    return dict(tok.split("=", 1) for tok in side.read_text().split() if "=" in tok)


def _load_mask(path: str) -> SamplingMask:
    kept = load_tensor(path)
    if kept.ndim != 2:
        raise ValueError(f"{path}: mask must be 2D, got shape {kept.shape}")
    head = _read_mask_header(Path(path))
    return SamplingMask(kept != 0, head.get("kind", "file"), float(head.get("R", "nan")),
                        int(head.get("seed", 0)))


def _load_images(path: str) -> list[np.ndarray]:
    p = Path(path)
    files = sorted(p.glob("*.hfdp")) if p.is_dir() else [p]
    if not files:
        raise ValueError(f"no .hfdp files under {path}")
    return [load_tensor(f) for f in files]


def cmd_train(run: _Run, cfg: dict) -> None:
    if cfg["domain"] not in ("mri", "ct"):
        raise ValueError(f"domain must be mri or ct, got {cfg['domain']!r}")
    profile = AlphaProfile.parse(cfg["alphas"])
    images = _load_images(_need(cfg, "data"))
    data = []
    for img in images:
        if img.ndim != 2:
            raise ValueError(f"training images must be 2D, got shape {img.shape}")
        if cfg["domain"] == "mri":
            img = img.astype(np.complex128)
        elif np.iscomplexobj(img):
            raise ValueError("ct training data must be real")
        data.append(forward_transform(img, profile, cfg["gradients"])[0].channels)
    tcfg = TrainConfig(cfg["patch_size"], cfg["batch_size"], cfg["epochs"],
                       cfg["learning_rate"], cfg["seed"], cfg["patches_per_image"],
                       cfg["deterministic"], cfg["precision"])
    res = dae_train(data, tcfg, sigma_eta=cfg["sigma"] / 255.0, depth=cfg["depth"],
                    features=cfg["features"])
    save_model(res.model, run.path("model.hfdm"))
    lines = ["epoch,loss"] + [f"{i},{v:.9g}" for i, v in enumerate(res.epoch_loss, start=1)]
    run.path("loss.csv").write_text("\n".join(lines) + "\n")
    run.path("model.txt").write_text(
        f"domain = {cfg['domain']}\nalphas = {cfg['alphas']}\n"
        f"gradients = {cfg['gradients']}\nsigma = {cfg['sigma']}\n"
        f"initial_loss = {res.initial_loss:.9g}\nfinal_loss = {res.final_loss:.9g}\n")
    if (os.cpu_count() or 1) == 1:
        # single-threaded CPU kernels are reproducible either way
        run.unused("deterministic")
    log.info("trained: loss %.6g -> %.6g", res.initial_loss, res.final_loss)


def cmd_recon_mri(run: _Run, cfg: dict) -> None:
    truth = load_tensor(cfg["truth"]) if cfg["truth"] else None
    seeded = False
    if cfg["kspace"]:
        mask = _load_mask(_need(cfg, "mask"))
        y = KSpaceData(load_tensor(cfg["kspace"]), mask)
        run.unused("mask_kind", "R", "noise_sigma")
    else:
        if truth is None:
            raise CliError("--truth or --kspace is required")
        if cfg["mask"]:
            mask = _load_mask(cfg["mask"])
            run.unused("mask_kind", "R")
        else:
            mask = make_mask(cfg["mask_kind"], cfg["R"], *truth.shape, seed=cfg["seed"])
            seeded = cfg["mask_kind"] != "radial" and cfg["R"] != 1
        y = encode(truth, mask)
        if cfg["noise_sigma"] > 0:
            y = add_kspace_noise(y, cfg["noise_sigma"], cfg["seed"])
            seeded = True
    if not seeded:
        run.unused("seed")
    run.unused("deterministic")

    ctx = _prior(run, cfg, is_complex=True)
    u, trace = reconstruct_mri(y, MriReconConfig(ctx, cfg["lam"], cfg["iterations"]), truth)
    zf = adjoint(y)
    save_tensor(run.path("recon.hfdp"), u)
    save_tensor(run.path("zero_filled.hfdp"), zf)
    run.preview("recon.png", np.abs(u))
    _write_trace(run.path("trace.csv"), trace)
    if truth is not None:
        ref = np.abs(truth)
        _write_metrics(run.path("metrics.csv"), {"zero_filled": report(np.abs(zf), ref),
                                                 "hfdaep": report(np.abs(u), ref)})


def cmd_recon_ct(run: _Run, cfg: dict) -> None:
    truth = load_tensor(cfg["truth"]) if cfg["truth"] else None
    if truth is not None and (truth.ndim != 2 or np.iscomplexobj(truth)):
        raise ValueError("ct truth must be a real 2D image")
    if cfg["sinogram"]:
        g = FanGeometry.from_sidecar(Path(_need(cfg, "geometry")).read_text())
        clean = Sinogram(load_tensor(cfg["sinogram"]), g)
        run.unused("views", "bins", "noise")
    else:
        if truth is None:
            raise CliError("--truth or --sinogram is required")
        g = FanGeometry(image_pixels=truth.shape[0], detector_bins=cfg["bins"]).sparse(
            cfg["views"])
        clean = siddon_project(truth, g)
        run.unused("geometry")
    simulate_noise = cfg["noise"] and not cfg["sinogram"]
    nm = None
    if simulate_noise or cfg["weighting"] != "unweighted":
        # for a measured sinogram the data themselves stand in for the mean
        nm = NoiseModel(clean.data, cfg["f"], cfg["T"])
    else:
        run.unused("f", "T")
    y = add_ct_noise(clean, nm, cfg["seed"]) if simulate_noise else clean
    if not simulate_noise:
        run.unused("seed")
    run.unused("deterministic")

    ctx = _prior(run, cfg, is_complex=False)
    u, trace = reconstruct_ct(y, CtReconConfig(ctx, cfg["lam"], cfg["iterations"],
                                               cfg["weighting"]), nm, truth)
    base = fbp(y)
    save_tensor(run.path("recon.hfdp"), u)
    save_tensor(run.path("fbp.hfdp"), base)
    save_tensor(run.path("sinogram.hfdp"), y.data)
    run.path("sinogram.txt").write_text(g.sidecar())
    run.preview("recon.png", u)
    run.preview("fbp.png", base)
    _write_trace(run.path("trace.csv"), trace)
    if truth is not None:
        _write_metrics(run.path("metrics.csv"), {"fbp": report(base, truth),
                                                 "hfdaep": report(u, truth)})


def cmd_metrics(run: _Run, cfg: dict) -> None:
    u = load_tensor(_need(cfg, "input"))
    ref = load_tensor(_need(cfg, "reference"))
    if np.iscomplexobj(u) or np.iscomplexobj(ref):
        u, ref = np.abs(u), np.abs(ref)
    rep = report(u, ref)
    _write_metrics(run.path("metrics.csv"), {Path(cfg["input"]).stem: rep})
    print(rep)
    run.unused("seed", "deterministic")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "make-mask": cmd_make_mask,
    "train": cmd_train,
    "recon-mri": cmd_recon_mri,
    "recon-ct": cmd_recon_ct,
    "metrics": cmd_metrics,
}


def run_command(cmd: str, cfg: dict) -> dict:
    run = _Run(cmd, cfg)
    COMMANDS[cmd](run, cfg)
    manifest = run.manifest()
    (run.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args.command, args)
        run_command(args.command, cfg)
    except CliError as exc:
        print(f"hfdaep: error: UsageError: {_one_line(exc)}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"hfdaep: error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
