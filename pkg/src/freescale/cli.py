"""Command-line front end: generation runs, baseline benchmarking, and
oracle verification. Standard output is line-oriented key=value; manifests
are JSON; images are binary PPM (plus PNG when Pillow is importable).

Exit codes: 0 ok, 1 oracle failure, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import fileio, oracle
from .pipeline import CascadeConfig, ConfigError, NumericError, direct_generate, run

EXIT_OK = 0
EXIT_ORACLE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _load_config(path: str) -> CascadeConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return CascadeConfig.from_dict(raw)


def _write_png(path: Path, image: np.ndarray) -> bool:
    try:
        from PIL import Image
    except ImportError:
        return False
    arr = np.round(np.clip(image[0], 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)
    return True


def cmd_generate(args) -> int:
    try:
        config = _load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
            config.validate()
        mask = fileio.read_pgm(args.mask) if args.mask else None
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run(None, config, mask=mask)
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = fileio.write_ppm(out, result["image"])
    checksum = hashlib.sha256(payload).hexdigest()
    manifest = dict(result["manifest"])
    manifest["output_sha256"] = checksum
    fileio.write_manifest(f"{out}.manifest.json", manifest)
    png_written = _write_png(out.with_suffix(".png"), result["image"])

    print(f"out={out}")
    print(f"manifest={out}.manifest.json")
    print(f"checksum={checksum}")
    print(f"png={'yes' if png_written else 'no'}")
    for record in manifest["levels"]:
        print(
            f"level={record['level']} wall_ms={record['wall_ms']} "
            f"latent_mean={record['latent_mean']:.6f} latent_std={record['latent_std']:.6f}"
        )
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        config = _load_config(args.config)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    final_level = config.levels[-1]
    direct_times, cascade_times = [], []
    try:
        for _ in range(args.repeat):
            if args.arm in ("both", "direct"):
                t0 = time.perf_counter()
                direct_generate(config, final_level)
                direct_times.append(time.perf_counter() - t0)
            if args.arm in ("both", "cascade"):
                t0 = time.perf_counter()
                run(None, config)
                cascade_times.append(time.perf_counter() - t0)
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC

    if direct_times:
        print(f"direct_median_s={statistics.median(direct_times):.4f}")
    if cascade_times:
        print(f"cascade_median_s={statistics.median(cascade_times):.4f}")
    if direct_times and cascade_times:
        ratio = statistics.median(cascade_times) / statistics.median(direct_times)
        print(f"ratio={ratio:.4f}")
    print(f"repeat={args.repeat}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    names = oracle.CHECK_NAMES if args.check == "all" else (args.check,)
    results = oracle.run_checks(names, mutate=args.mutate)
    ok = True
    for r in results:
        ok = ok and r.passed
        print(f"check_{r.name}={'pass' if r.passed else 'fail'} max_dev={r.max_dev:.3e}")
    print(f"oracle={'pass' if ok else 'fail'}")
    return EXIT_OK if ok else EXIT_ORACLE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freescale",
        description="Deterministic tuning-free high-resolution diffusion cascade (toy scale).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="run the cascade and write image + manifest")
    gen.add_argument("--config", required=True, help="JSON config path")
    gen.add_argument("--seed", type=int, default=None, help="override the config seed")
    gen.add_argument("--out", default="out.ppm", help="output image path (PPM)")
    gen.add_argument("--mask", default=None, help="grayscale PGM detail-weight mask")
    gen.set_defaults(func=cmd_generate)

    bench = sub.add_parser("bench", help="time cascade vs direct inference")
    bench.add_argument("--config", required=True)
    bench.add_argument("--repeat", type=int, default=3)
    bench.add_argument("--arm", choices=("both", "direct", "cascade"), default="both")
    bench.set_defaults(func=cmd_bench)

    orc = sub.add_parser("oracle", help="run brute-force verification suites")
    orc.add_argument(
        "--check",
        choices=("fusion", "ddim", "conv", "patch", "blend", "all"),
        default="all",
    )
    orc.add_argument(
        "--mutate",
        choices=("fusion-sign", "dilate-up"),
        default=None,
        help=argparse.SUPPRESS,  # self-test: inject a known-bad variant
    )
    orc.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
