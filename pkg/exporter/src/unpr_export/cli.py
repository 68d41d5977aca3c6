"""Command-line front end: ``unpr-export export`` and ``unpr-export check``.

Exit codes match the engine CLI: 0 success, 1 check failed, 2 usage or
config error, 3 unreadable/invalid file.
"""

from __future__ import annotations

import argparse
import sys

from unetprune import ArchConfig, BuildError, ContainerError, GraphError

from .export import CheckpointReadError, export, roundtrip_check
from .namemap import ExportError

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_BAD_FILE = 3


def _parse_scales(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ExportError(
            f"--scales expects three comma-separated ints (face,audio,"
            f"decoder), got '{text}'")
    try:
        f, a, d = (int(p) for p in parts)
    except ValueError:
        raise ExportError(f"--scales values must be integers, got '{text}'")
    return (f, a, d)


def _arch_config(args) -> ArchConfig:
    if args.arch == "pix2pix":
        if args.scales is not None:
            raise ExportError("--scales applies to wav2lip only; "
                              "use --nf for pix2pix")
        return ArchConfig(arch="pix2pix",
                          base_filters=args.nf if args.nf is not None else 64)
    if args.nf is not None:
        raise ExportError("--nf applies to pix2pix only; "
                          "use --scales for wav2lip")
    scales = (_parse_scales(args.scales) if args.scales is not None
              else (16, 32, 32))
    return ArchConfig(arch="wav2lip", base_filters=scales)


def cmd_export(args) -> int:
    cfg = _arch_config(args)
    out = export(args.ckpt, cfg, args.out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    report = roundtrip_check(args.ckpt, args.container)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unpr-export",
        description="Convert trained U-Net generator checkpoints into "
                    "UNPR containers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "export", help="convert a torch checkpoint into a UNPR container")
    p.add_argument("--arch", required=True, choices=("pix2pix", "wav2lip"))
    p.add_argument("--nf", type=int, default=None,
                   help="pix2pix encoder base width (default 64)")
    p.add_argument("--scales", default=None,
                   help="wav2lip face,audio,decoder base widths "
                        "(default 16,32,32)")
    p.add_argument("--ckpt", required=True, help="torch checkpoint path")
    p.add_argument("--out", required=True, help="output container path")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser(
        "check", help="verify a container tensor-for-tensor against the "
                      "checkpoint it was exported from")
    p.add_argument("--ckpt", required=True, help="torch checkpoint path")
    p.add_argument("--container", required=True, help="UNPR container path")
    p.set_defaults(func=cmd_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CheckpointReadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE
    except (ExportError, BuildError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ContainerError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE


def entry() -> None:
    sys.exit(main())
