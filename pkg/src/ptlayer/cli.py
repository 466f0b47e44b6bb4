"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every subcommand computes all outputs before writing any of them, and each
file is written through a temporary file and renamed into place.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .distort import (DistortConfig, DistortConfigError, distort_corpus, format_manifest,
                      parse_manifest)
from .gradcheck import format_csv, format_table, passes, run_suite
from .homography import (DegenerateHomographyError, Homography, HorizonError,
                         format_homography, read_homography)
from .image import ImageFormatError, atomic_write, encode_pnm, read_image
from .kernels import BICUBIC, BILINEAR, KernelSpec
from .layer import MEAN, SUM, warp
from .optim import TrainConfig, train_rectifier

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _kernel(text):
    try:
        return KernelSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ptlayer", description="Differentiable perspective-transformation layer tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{warp,distort,rectify,gradcheck,inspect}",
                                parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("warp", help="warp one image by a homography")
    p.add_argument("--in", dest="input", required=True, type=Path)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--tm", type=Path, help="homography text file (3x3)")
    src.add_argument("--params", type=float, nargs=8, metavar="P", help="h11 h12 h13 h21 h22 h23 h31 h32")
    p.add_argument("--kernel", type=_kernel, default=KernelSpec(BILINEAR),
                   help="bilinear | bicubic[:alpha] (default bilinear)")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--maxval", type=int, default=None, help="output maxval (default: input's)")

    p = sub.add_parser("distort", help="apply random perspective distortions to a directory of images")
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--rho", type=float, default=0.15)
    p.add_argument("--keep", type=float, default=0.0, help="fraction of images left unmodified")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel", type=_kernel, default=KernelSpec(BILINEAR))

    p = sub.add_parser("rectify", help="train a stack of single-TM layers to undo distortions")
    p.add_argument("--pairs", required=True, type=Path, help="manifest written by 'distort'")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--kernel", type=_kernel, default=KernelSpec(BILINEAR))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=("exact_identity", "identity_jitter"), default="exact_identity")
    p.add_argument("--grad-reduction", choices=(MEAN, SUM), default=MEAN)
    p.add_argument("--report", type=Path, required=True, help="loss trace CSV (epoch,mse)")
    p.add_argument("--save-tms", type=Path, required=True,
                   help="directory for learned homographies and rectified images")

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--configs", type=int, default=100)
    p.add_argument("--kernel", choices=("both", BILINEAR, BICUBIC), default="both")
    p.add_argument("--csv", type=Path, default=None, help="also write the report as CSV")

    p = sub.add_parser("inspect", help="describe a homography file")
    p.add_argument("--tm", required=True, type=Path)
    return parser


def _commit(files: dict) -> None:
    for path, data in files.items():
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write(path, data)


def _homography_from_args(args) -> Homography:
    if args.tm is not None:
        return read_homography(args.tm)
    return Homography.from_params(args.params)


def cmd_warp(args, out):
    image, maxval = read_image(args.input)
    h = _homography_from_args(args)
    warped = warp(image, h, args.kernel)
    _commit({args.out: encode_pnm(warped, args.maxval or maxval)})
    print(f"warped {args.input} -> {args.out} ({args.kernel})", file=out)


def _list_images(directory: Path):
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ValueError(f"no .pgm/.ppm images in {directory}")
    return files


def cmd_distort(args, out):
    try:
        cfg = DistortConfig(args.rho, args.keep, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    paths = _list_images(args.input)
    loaded = [read_image(p) for p in paths]
    outputs, manifest = distort_corpus([im for im, _ in loaded], cfg, args.kernel)
    manifest_path = args.out / "manifest.csv"
    files = {}
    for path, (_, maxval), img in zip(paths, loaded, outputs):
        files[args.out / path.name] = encode_pnm(img, maxval)
    extra = {
        "original": [os.path.relpath(p.resolve(), args.out.resolve()) for p in paths],
        "distorted": [p.name for p in paths],
    }
    files[manifest_path] = format_manifest(manifest, extra).encode()
    _commit(files)
    n_mod = sum(e.transformed for e in manifest)
    print(f"distorted {n_mod} of {len(manifest)} images (rho={cfg.rho}, seed={cfg.seed}); "
          f"manifest: {manifest_path}", file=out)


def cmd_rectify(args, out):
    if args.layers < 1 or args.epochs < 1 or args.lr <= 0:
        raise UsageError("--layers and --epochs must be >= 1 and --lr positive")
    base = args.pairs.parent
    entries, extras = parse_manifest(args.pairs.read_text())
    if not entries:
        raise ValueError("manifest lists no images")
    if any("original" not in e or "distorted" not in e for e in extras):
        raise ValueError("manifest lacks 'original'/'distorted' path columns")
    pairs, names, maxvals = [], [], []
    for e in extras:
        distorted, maxval = read_image(base / e["distorted"])
        original, _ = read_image(base / e["original"])
        pairs.append((distorted, original))
        names.append(Path(e["distorted"]).name)
        maxvals.append(maxval)
    distortions = {e.homography for e in entries}
    truth = next(iter(distortions)) if len(distortions) == 1 else None
    config = TrainConfig(epochs=args.epochs, lr=args.lr, kernel=args.kernel, layer_count=args.layers,
                         seed=args.seed, init=args.init, grad_reduction=args.grad_reduction)
    model, report = train_rectifier(pairs, config, truth)
    if not all(math.isfinite(v) for v in report.losses):
        raise NumericalFailure("training diverged (non-finite loss)")

    trace = "epoch,mse\n" + "".join(f"{i},{v:.17g}\n" for i, v in enumerate(report.losses))
    files = {args.report: trace.encode()}
    for i, layer in enumerate(model.layers, start=1):
        files[args.save_tms / f"layer{i}.txt"] = format_homography(layer.tms[0]).encode()
    files[args.save_tms / "composite.txt"] = format_homography(report.composite).encode()
    for (distorted, _), name, maxval in zip(pairs, names, maxvals):
        files[args.save_tms / f"rectified_{name}"] = encode_pnm(model(distorted), maxval)
    _commit(files)
    first, last = report.losses[0], report.losses[-1]
    print(f"initial mse {first:.6g}  final mse {last:.6g}  ratio {last / first if first else 0.0:.4g}",
          file=out)
    if truth is not None:
        print(f"corner reprojection error {report.corner_error:.4g} px", file=out)


def cmd_gradcheck(args, out):
    if args.configs < 1:
        raise UsageError("--configs must be >= 1")
    kinds = (BILINEAR, BICUBIC) if args.kernel == "both" else (args.kernel,)
    reports = run_suite(args.seed, args.configs, tuple(KernelSpec(k) for k in kinds))
    print(format_table(reports), end="", file=out)
    ok = passes(reports)
    if ok and args.csv is not None:
        _commit({args.csv: format_csv(reports).encode()})
    if not ok:
        raise NumericalFailure("gradient check exceeded tolerance")


def _fmt_matrix(m) -> str:
    return "".join("  " + " ".join(f"{v: .10g}" for v in row) + "\n" for row in m)


def cmd_inspect(args, out):
    h = read_homography(args.tm)
    print("homography:", file=out)
    print(_fmt_matrix(h.m), end="", file=out)
    print("inverse:", file=out)
    print(_fmt_matrix(h.inverse().m), end="", file=out)
    print(f"determinant: {np.linalg.det(h.m):.10g}", file=out)
    print("unit frame corners:", file=out)
    for c in ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)):
        try:
            x, y = h.apply(c)
            print(f"  ({c[0]:g}, {c[1]:g}) -> ({x:.10g}, {y:.10g})", file=out)
        except HorizonError:
            print(f"  ({c[0]:g}, {c[1]:g}) -> horizon", file=out)


COMMANDS = {"warp": cmd_warp, "distort": cmd_distort, "rectify": cmd_rectify,
            "gradcheck": cmd_gradcheck, "inspect": cmd_inspect}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=err)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"ptlayer {args.command}: {exc}", file=err)
        return EXIT_USAGE
    except (NumericalFailure, DegenerateHomographyError, HorizonError, DistortConfigError) as exc:
        print(f"ptlayer {args.command}: numerical failure: {exc}", file=err)
        return EXIT_NUMERIC
    except (OSError, ImageFormatError, ValueError) as exc:
        print(f"ptlayer {args.command}: {exc}", file=err)
        return EXIT_DATA
    return EXIT_OK


run = main


if __name__ == "__main__":
    sys.exit(main())
