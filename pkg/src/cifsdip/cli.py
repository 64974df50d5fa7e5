"""Command-line entry point: ``cifsdip <command> [options]``.

Commands
    denoise    fit the network to one noisy image and save the output at the stopping epoch
    jpeg-size  print the JPEG byte count of an image
    calibrate  choose lambda for one noise level from clean images
    benchmark  ES / No-ES / Peak PSNR over a directory of clean images
    detect     rerun stopping detection on a saved trace for another lambda
    synth      write synthetic structured test images

Every command that writes files also writes ``config.txt`` (``key=value``)
listing every resolved option; ``--config FILE`` loads such a file as defaults.

Exit codes: 0 success, 1 usage/configuration, 2 unreadable input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from . import __version__
from .bench import load_dataset, run_benchmark
from .calibration import GLOBAL, WINDOWED, LambdaTable, calibrate, lambda_for_sigma, parse_grid
from .errors import CifsDipError, ConfigurationError, InputError, NumericalError, ParseError
from .es import EpochTrace, EsConfig, NumericalFailure, detect_es, run_dip_with_es
from .images import NoiseSpec, add_gaussian_noise, crop_divisible, list_images, load_image, save_image, synthetic_suite, write_suite
from .jpeg import JpegConfig, encode
from .model import NetworkConfig

log = logging.getLogger("cifsdip")

DEFAULT_GRID = "log:1:1e8:33"
EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def shipped_lambda_table() -> Path:
    return Path(str(resources.files("cifsdip") / "data" / "lambda_table.csv"))


def _add_es_args(p, epochs=20000, patience=1000):
    p.add_argument("--epochs", type=int, default=epochs, help="total optimisation epochs T")
    p.add_argument("--patience", type=int, default=patience, help="window S of the stopping rule")
    p.add_argument("--quality", type=int, default=95, help="JPEG quality used for the size criterion")
    p.add_argument("--subsampling", choices=["4:2:0", "4:4:4"], default="4:2:0")
    p.add_argument("--lr", type=float, default=0.01, help="Adam learning rate")
    p.add_argument("--latent-depth", type=int, default=32)
    p.add_argument("--sigma-p", type=float, default=1.0 / 30.0, help="std of the latent jitter")
    p.add_argument("--cifs-stride", type=int, default=1, help="evaluate the criterion every k epochs")
    p.add_argument("--net-config", default=None, help="key=value network config file")
    p.add_argument("--seed", type=int, default=0, help="master seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cifsdip", description="Deep image prior with JPEG-size early stopping")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("denoise", help="denoise one image with early stopping")
    p.add_argument("--config", default=None, help="load defaults from an echoed config.txt")
    p.add_argument("--input", help="noisy PPM/PGM image")
    p.add_argument("--sigma", type=float, default=None, help="noise std (0-255 scale); lambda from table")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="criterion weight")
    p.add_argument("--lambda-table", default=None, help="sigma,lambda CSV (default: bundled table)")
    p.add_argument("--clean", default=None, help="clean reference image; enables PSNR columns")
    p.add_argument("--crop", action="store_true", help="centre-crop to a size the network accepts")
    p.add_argument("--out", help="output directory")
    _add_es_args(p)

    p = sub.add_parser("jpeg-size", help="print the JPEG byte count of an image")
    p.add_argument("--config", default=None)
    p.add_argument("--input")
    p.add_argument("--quality", type=int, default=95)
    p.add_argument("--subsampling", choices=["4:2:0", "4:4:4"], default="4:2:0")
    p.add_argument("--restart-interval", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.0, help="add gaussian noise first (0-255 scale)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save", default=None, help="also write the JFIF file here")

    p = sub.add_parser("calibrate", help="grid-search lambda for one noise level")
    p.add_argument("--config", default=None)
    p.add_argument("--clean-dir")
    p.add_argument("--sigma", type=float)
    p.add_argument("--grid", default=DEFAULT_GRID, help="'a,b,c' or 'log:lo:hi:n'")
    p.add_argument("--mode", choices=[GLOBAL, WINDOWED], default=GLOBAL,
                   help="stopping epoch used when scoring: global argmin or the windowed rule")
    p.add_argument("--out", help="lambda table CSV to create or update")
    p.add_argument("--report", default=None, help="per-lambda report CSV")
    p.add_argument("--max-size", type=int, default=None, help="centre-crop images to at most this size")
    p.add_argument("--max-images", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    _add_es_args(p)

    p = sub.add_parser("benchmark", help="ES / No ES / Peak PSNR over a directory")
    p.add_argument("--config", default=None)
    p.add_argument("--image-dir")
    p.add_argument("--sigmas", default="15,25,50")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--lambda-table", default=None)
    p.add_argument("--max-size", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    _add_es_args(p)

    p = sub.add_parser("detect", help="stopping detection on a saved trace")
    p.add_argument("--config", default=None)
    p.add_argument("--trace")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)

    p = sub.add_parser("synth", help="write synthetic structured test images")
    p.add_argument("--config", default=None)
    p.add_argument("--out")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.0, help="also write noisy copies (0-255 scale)")
    return parser


# ---------------------------------------------------------------------------
# config echo
# ---------------------------------------------------------------------------

def _read_config(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"{path}: expected key=value", f"line {lineno}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: list) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    cfg = _read_config(args.config)
    if cfg.get("command", args.command) != args.command:
        raise UsageError(f"config file is for '{cfg['command']}', not '{args.command}'")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    defaults = {}
    for action in subparser._actions:
        if action.dest in cfg and action.dest not in ("help", "config"):
            raw = cfg[action.dest]
            if raw == "":
                defaults[action.dest] = None
            elif isinstance(action, argparse._StoreTrueAction):
                defaults[action.dest] = raw.lower() == "true"
            else:
                defaults[action.dest] = action.type(raw) if action.type else raw
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _echo_config(path: Path, args: argparse.Namespace, extra: dict = None):
    lines = []
    for k, v in sorted(vars(args).items()):
        if k in ("config", "verbose"):
            continue
        lines.append(f"{k}={'' if v is None else (str(v).lower() if isinstance(v, bool) else v)}")
    for k, v in (extra or {}).items():
        lines.append(f"# {k}={v}")
    path.write_text("\n".join(lines) + "\n")


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")


def _es_config(args, lam=0.0) -> EsConfig:
    return EsConfig(
        lam=lam, epochs=args.epochs, patience=args.patience,
        jpeg=JpegConfig(quality=args.quality, subsampling=args.subsampling),
        lr=args.lr, seed=args.seed, latent_depth=args.latent_depth,
        sigma_p=args.sigma_p, cifs_stride=args.cifs_stride,
    )


def _net_config(args, channels: int):
    if args.net_config:
        try:
            cfg = NetworkConfig.from_text(Path(args.net_config).read_text())
        except OSError as exc:
            raise InputError(f"cannot read network config: {exc}") from None
        return replace(cfg, output_channels=channels, input_channels=args.latent_depth)
    return NetworkConfig(input_channels=args.latent_depth, output_channels=channels)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_denoise(args) -> int:
    _require(args, "input", "out")
    if (args.sigma is None) == (args.lam is None):
        raise UsageError("give exactly one of --sigma (table lookup) or --lambda")
    if args.lam is not None:
        lam = args.lam
    else:
        table = LambdaTable.load(args.lambda_table or shipped_lambda_table())
        lam = lambda_for_sigma(table, args.sigma)
    noisy = load_image(args.input)
    net = _net_config(args, noisy.shape[0])
    if args.crop:
        noisy = crop_divisible(noisy, 2 ** net.depth)
    clean = None
    if args.clean:
        clean = load_image(args.clean)
        if args.crop:
            clean = crop_divisible(clean, 2 ** net.depth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    es_cfg = _es_config(args, lam)
    _echo_config(out / "config.txt", args, {"resolved_lambda": repr(lam), **{f"net.{k}": v for k, v in _kv(net)}})
    try:
        trace, result = run_dip_with_es(noisy, net, es_cfg, clean=clean)
    except NumericalFailure as exc:
        exc.trace.save(out / "trace.csv")
        raise
    trace.save(out / "trace.csv")
    save_image(out / "denoised.ppm" if noisy.shape[0] == 3 else out / "denoised.pgm", result.image)
    (out / "summary.txt").write_text(result.summary_text())
    print(result.summary_text(), end="")
    return EXIT_OK


def _kv(net: NetworkConfig):
    for line in net.to_text().splitlines():
        k, v = line.split("=", 1)
        yield k, v


def cmd_jpeg_size(args) -> int:
    _require(args, "input")
    img = load_image(args.input)
    if args.sigma:
        img = add_gaussian_noise(img, NoiseSpec(args.sigma, seed=args.seed))
    data = encode(img, JpegConfig(quality=args.quality, subsampling=args.subsampling,
                                  restart_interval=args.restart_interval))
    if args.save:
        Path(args.save).write_bytes(data)
        _echo_config(Path(str(args.save) + ".config.txt"), args)
    print(len(data))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    _require(args, "clean_dir", "sigma", "out")
    grid = parse_grid(args.grid)
    if not list_images(args.clean_dir):
        raise UsageError(f"no PPM/PGM images in {args.clean_dir}")
    net = _net_config(args, 3) if args.net_config else None
    depth = net.depth if net else NetworkConfig().depth
    images = load_dataset(args.clean_dir, 2 ** depth, args.max_size)
    if args.max_images:
        images = images[: args.max_images]
    if net and images[0][1].shape[0] != net.output_channels:
        net = replace(net, output_channels=images[0][1].shape[0])
    es_cfg = _es_config(args)
    run = calibrate(images, args.sigma, grid, net, es_cfg, mode=args.mode, seed=args.seed, workers=args.workers)
    table_path = Path(args.out)
    table_path.parent.mkdir(parents=True, exist_ok=True)
    table = LambdaTable.load(table_path) if table_path.exists() else LambdaTable()
    table.upsert(args.sigma, run.best_lambda)
    table.save(table_path)
    report = Path(args.report) if args.report else table_path.with_name(f"calibration_sigma{args.sigma:g}.csv")
    report.write_text(run.report_csv())
    _echo_config(table_path.with_name(f"calibrate_sigma{args.sigma:g}.config.txt"), args,
                 {"best_lambda": repr(run.best_lambda)})
    print(f"sigma={args.sigma:g} lambda={run.best_lambda!r}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    _require(args, "image_dir", "out")
    if args.lam is not None and args.lambda_table is not None:
        raise UsageError("give at most one of --lambda or --lambda-table")
    lam = args.lam if args.lam is not None else LambdaTable.load(args.lambda_table or shipped_lambda_table())
    try:
        sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad --sigmas {args.sigmas!r}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(out / "config.txt", args)
    net = _net_config(args, 3) if args.net_config else None
    report = run_benchmark(args.image_dir, sigmas, lam, net, _es_config(args), seed=args.seed,
                           workers=args.workers, trace_dir=out / "traces", max_size=args.max_size)
    (out / "report.csv").write_text(report.to_csv())
    (out / "aggregate.csv").write_text(report.aggregate_csv())
    if report.failures:
        (out / "failures.txt").write_text("".join(f"{n},{s},{m}\n" for n, s, m in report.failures))
    for sigma, e in report.aggregate().items():
        print(f"sigma={sigma:g} n={e['n']} "
              + " ".join(f"{c}={e[c][0]:.3f}+-{e[c][1]:.3f}" for c in ("psnr_es", "psnr_no_es", "psnr_peak")))
    return EXIT_OK


def _infer_pixels(trace_text: str) -> int:
    """H*W recovered from rows where regularizer = cifs_bytes**2 / (H*W)."""
    import csv
    import io

    reader = csv.DictReader(io.StringIO(trace_text))
    for row in reader:
        try:
            size, reg = int(row["cifs_bytes"]), float(row["regularizer"])
        except (KeyError, TypeError, ValueError):
            break
        if reg > 0:
            return int(round(size * size / reg))
    raise UsageError("cannot infer image size from the trace; pass --height and --width")


def cmd_detect(args) -> int:
    _require(args, "trace", "lam", "patience")
    try:
        text = Path(args.trace).read_text()
    except OSError as exc:
        raise InputError(f"cannot read trace: {exc}") from None
    if args.height and args.width:
        h, w = args.height, args.width
    else:
        h, w = _infer_pixels(text), 1
    trace = EpochTrace.from_csv(text, h, w, lam=args.lam)
    stride = trace.epoch[1] - trace.epoch[0] if len(trace) > 1 else 1
    if stride < 1 or args.patience % stride:
        raise UsageError(f"patience {args.patience} is not a multiple of the trace stride {stride}")
    det = detect_es(trace.criterion, args.patience // stride)
    t_star = trace.epoch[-1] if det.fallback else trace.epoch[det.t_star - 1]
    cands = [trace.epoch[i - 1] for i in det.candidates]
    print(f"t_star={t_star}")
    print(f"fallback={str(det.fallback).lower()}")
    print(f"candidates={' '.join(map(str, cands))}")
    return EXIT_OK


def cmd_synth(args) -> int:
    _require(args, "out")
    out = Path(args.out)
    suite = synthetic_suite(args.count, args.size, seed=args.seed)
    write_suite(out / "clean", suite)
    if args.sigma:
        noisy = [(n, add_gaussian_noise(img, NoiseSpec(args.sigma, seed=args.seed * 7919 + i)))
                 for i, (n, img) in enumerate(suite)]
        write_suite(out / f"noisy_sigma{args.sigma:g}", noisy)
    _echo_config(out / "config.txt", args)
    print(out)
    return EXIT_OK


COMMANDS = {
    "denoise": cmd_denoise,
    "jpeg-size": cmd_jpeg_size,
    "calibrate": cmd_calibrate,
    "benchmark": cmd_benchmark,
    "detect": cmd_detect,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CifsDipError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
