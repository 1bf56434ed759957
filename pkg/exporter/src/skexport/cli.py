"""Export/verify command line. Exit codes: 0 success, 1 usage, 2 validation,
3 I/O, mirroring the primary toolkit's conventions."""

from __future__ import annotations

import argparse
import sys

from spikekit.errors import SpikekitError

from .export import ExportError, VerifyError, export_model, verify_roundtrip
from .recipes import ARCHITECTURES, ExportRecipe

EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def cmd_export(args) -> int:
    recipe = ExportRecipe(architecture=args.arch, epochs=args.epochs, seed=args.seed)
    out = export_model(recipe, args.out)
    dev = verify_roundtrip(out)
    print(f"exported {args.arch} to {out} (round-trip deviation {dev:.2e})")
    return 0


def cmd_verify(args) -> int:
    dev = verify_roundtrip(args.model)
    print(f"round-trip deviation {dev:.2e} (threshold 1e-3)")
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="spikekit-export", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("export", help="train a reference model and export it")
    e.add_argument("--arch", required=True, choices=sorted(ARCHITECTURES))
    e.add_argument("--out", required=True)
    e.add_argument("--epochs", type=int, default=25)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_export)

    v = sub.add_parser("verify", help="re-check reference pairs against the primary engine")
    v.add_argument("--model", required=True)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ExportError, VerifyError, SpikekitError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
